#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dwiqc/app/commands.hpp"
#include "dwiqc/app/http_server.hpp"

using namespace dwiqc;

namespace {

View view_arg(const std::string& s) { return parse_view(s); }

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"dwiqc: slice-level artifact detection and volume QC for diffusion MRI"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(tool_version));

    PhantomOptions ph;
    auto* phantom = app.add_subcommand("phantom", "write clean synthetic DWI phantoms");
    phantom->add_option("--out", ph.out, "output directory")->required();
    phantom->add_option("--count", ph.count, "number of volumes");
    phantom->add_option("--seed", ph.seed);
    phantom->add_option("--nx", ph.phantom.nx);
    phantom->add_option("--ny", ph.phantom.ny);
    phantom->add_option("--nz", ph.phantom.nz);
    phantom->add_option("--gradients", ph.phantom.gradients, "volumes per series, the first is b=0");
    phantom->add_option("--noise", ph.phantom.noise_sigma, "noise sigma relative to tissue");

    SimulateOptions sim;
    auto* simulate = app.add_subcommand("simulate", "inject artifacts into clean volumes and write labels");
    simulate->add_option("--clean-dir", sim.clean_dir)->required();
    simulate->add_option("--out", sim.out)->required();
    simulate->add_option("--mix", sim.mix, "kind=fraction[,kind=fraction...]")->required();
    simulate->add_option("--severity", sim.severity, "value or lo:hi");
    simulate->add_option("--seed", sim.seed);

    std::filesystem::path backbone_out;
    std::uint64_t backbone_seed = 2024;
    auto* backbone = app.add_subcommand("make-backbone", "write the reference convolutional backbone weights");
    backbone->add_option("--out", backbone_out, "safetensors path")->required();
    backbone->add_option("--seed", backbone_seed);

    TrainOptions tr;
    std::string train_view, train_backend;
    auto* train = app.add_subcommand("train", "train one slice detector");
    train->add_option("--config", tr.config)->required();
    train->add_option("--view", train_view, "axial or sagittal (overrides config)");
    train->add_option("--backend", train_backend, "overrides config backend");
    train->add_option("--out-model", tr.out_model)->required();

    QcOptions qo;
    auto* qc = app.add_subcommand("qc", "score volumes and write QC reports");
    qc->add_option("--input", qo.input, "NIfTI file or directory")->required();
    qc->add_option("--axial-model", qo.axial_model, "model path or oracle:<labels.csv>")->required();
    qc->add_option("--sagittal-model", qo.sagittal_model, "model path or oracle:<labels.csv>")->required();
    qc->add_option("--axial-threshold", qo.thresholds.axial_slice_count);
    qc->add_option("--sagittal-threshold", qo.thresholds.sagittal_slice_count);
    qc->add_option("--report-dir", qo.report_dir)->required();
    qc->add_flag("--thumbnails", qo.thumbnails, "write PNGs of flagged slices");

    EvaluateOptions ev;
    auto* evaluate = app.add_subcommand("evaluate", "cross-validation, threshold sweep, cross-dataset and finetune runs");
    evaluate->add_option("--config", ev.config)->required();
    evaluate->add_option("--mode", ev.mode, "cv, cross-dataset, sweep or finetune")->required();
    evaluate->add_option("--out", ev.out_dir, "output directory")->required();

    FeaturesOptions fo;
    std::string features_view = "axial";
    auto* features = app.add_subcommand("features", "compute a handcrafted feature cache");
    features->add_option("--volumes", fo.volumes)->required();
    features->add_option("--labels", fo.labels)->required();
    features->add_option("--descriptor", fo.descriptor, "gabor, zernike or lbp");
    features->add_option("--view", features_view);
    features->add_option("--out", fo.out, "cache path stem")->required();

    std::filesystem::path serve_reports, label_out;
    std::string host = "127.0.0.1";
    int port = 8080;
    auto* serve = app.add_subcommand("serve", "serve reports and collect review decisions over HTTP");
    serve->add_option("--report-dir", serve_reports)->required();
    serve->add_option("--label-out", label_out)->required();
    serve->add_option("--host", host);
    serve->add_option("--port", port);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*phantom) {
            cmd_phantom(ph, std::cout);
        } else if (*simulate) {
            cmd_simulate(sim, std::cout);
        } else if (*backbone) {
            cmd_make_backbone(backbone_out, backbone_seed, std::cout);
        } else if (*train) {
            if (!train_view.empty()) tr.view = view_arg(train_view);
            if (!train_backend.empty()) tr.backend = parse_backend(train_backend);
            cmd_train(tr, std::cout);
        } else if (*qc) {
            cmd_qc(qo, std::cout);
        } else if (*evaluate) {
            cmd_evaluate(ev, std::cout);
        } else if (*features) {
            fo.view = view_arg(features_view);
            cmd_features(fo, std::cout);
        } else if (*serve) {
            ReviewService service(serve_reports, label_out);
            ReviewServer server(service, host, port);
            std::cout << "serving " << service.volume_ids().size() << " reports on http://" << host << ":" << server.port()
                      << "/api/reports" << std::endl;
            server.listen();
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
