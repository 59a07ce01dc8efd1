#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <json.hpp>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/fsutil.hpp"
#include "dwiqc/core/labels.hpp"
#include "dwiqc/pipeline/pipeline.hpp"

namespace dwiqc {

inline constexpr int api_schema_version = 1;

struct HttpResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

/// One expert verdict on one slice of a served report.
struct ReviewDecision {
    std::string volume_id;
    View view = View::axial;
    int gradient = 0;
    int index = 0;
    int expert_label = 0;
    bool prior_flag = false;
    std::string reviewer;
    std::string timestamp;

    LabelRow label_row() const
    {
        return {volume_id, view, gradient, index, expert_label ? Label::artifactual : Label::artifact_free, "expert"};
    }
};

inline nlohmann::json to_json(const ReviewDecision& d)
{
    return {{"volume_id", d.volume_id}, {"view", to_string(d.view)}, {"gradient", d.gradient},
            {"index", d.index},         {"expert_label", d.expert_label}, {"prior_flag", d.prior_flag},
            {"reviewer", d.reviewer},   {"timestamp", d.timestamp}};
}

/// Request handling for the review API, independent of any transport.
/// Reports are read once at construction and never written. Decisions go
/// append-only to a label CSV (with a `source` column) and a JSON-lines
/// sidecar next to it; existing decisions are re-read on construction.
class ReviewService {
public:
    ReviewService(std::filesystem::path report_dir, std::filesystem::path label_out)
        : report_dir_(std::move(report_dir)), label_out_(std::move(label_out))
    {
        if (!std::filesystem::is_directory(report_dir_)) {
            throw ConfigError("report directory '" + report_dir_.string() + "' does not exist");
        }
        if (std::filesystem::exists(report_dir_ / "report.json")) add_report(report_dir_);
        for (const auto& e : std::filesystem::directory_iterator(report_dir_)) {
            if (e.is_directory() && std::filesystem::exists(e.path() / "report.json")) add_report(e.path());
        }
        if (reports_.empty()) throw ConfigError("no report.json found under '" + report_dir_.string() + "'");
        if (label_out_.empty()) throw ConfigError("--label-out is required");
        if (std::filesystem::exists(label_out_) && std::filesystem::file_size(label_out_) > 0) {
            decisions_ = read_label_csv(label_out_);
        }
    }

    std::vector<std::string> volume_ids() const
    {
        std::vector<std::string> ids;
        for (const auto& [id, entry] : reports_) ids.push_back(id);
        return ids;
    }

    std::size_t decision_count() const
    {
        std::lock_guard lock(mutex_);
        return decisions_.size();
    }

    std::filesystem::path sidecar_path() const { return std::filesystem::path(label_out_).concat(".jsonl"); }

    HttpResponse handle(const std::string& method, const std::string& path,
                        const std::map<std::string, std::string>& query = {}, const std::string& body = {})
    {
        try {
            return route(method, path, query, body);
        } catch (const std::exception& e) {
            return error(500, e.what());
        }
    }

private:
    struct Entry {
        std::filesystem::path dir;
        QCReport report;
    };

    static HttpResponse json_response(const nlohmann::json& j, int status = 200)
    {
        return {status, "application/json", j.dump(2) + "\n"};
    }

    static HttpResponse error(int status, const std::string& reason)
    {
        return json_response({{"schema_version", api_schema_version}, {"error", reason}}, status);
    }

    void add_report(const std::filesystem::path& dir)
    {
        QCReport r = read_report(dir / "report.json");
        const std::string id = r.volume_id;
        if (reports_.count(id)) throw ConfigError("volume '" + id + "' has more than one report");
        reports_.emplace(id, Entry{dir, std::move(r)});
    }

    const Entry* find(const std::string& id) const
    {
        auto it = reports_.find(id);
        return it == reports_.end() ? nullptr : &it->second;
    }

    static std::optional<int> preview_threshold(const std::map<std::string, std::string>& query)
    {
        auto it = query.find("threshold-preview");
        if (it == query.end()) return std::nullopt;
        std::size_t used = 0;
        int t = -1;
        try {
            t = std::stoi(it->second, &used);
        } catch (const std::exception&) {
        }
        if (used != it->second.size() || t < 0) throw std::invalid_argument("threshold-preview must be an integer >= 0");
        return t;
    }

    HttpResponse route(const std::string& method, const std::string& path, const std::map<std::string, std::string>& query,
                       const std::string& body)
    {
        static const std::regex report_re(R"(^/api/reports/([^/]+)$)");
        static const std::regex slice_re(R"(^/api/slices/([^/]+)/(axial|sagittal)/(\d+)/(\d+)\.png$)");
        std::smatch m;
        if (method == "GET" && path == "/api/reports") return list_reports();
        if (method == "GET" && path == "/api/export/labels") return export_labels();
        if (method == "POST" && path == "/api/decisions") return post_decision(body);
        std::optional<int> preview;
        try {
            preview = preview_threshold(query);
        } catch (const std::invalid_argument& e) {
            return error(400, e.what());
        }
        if (method == "GET" && std::regex_match(path, m, report_re)) return get_report(m[1], preview);
        if (method == "GET" && std::regex_match(path, m, slice_re)) {
            return get_slice(m[1], parse_view(m[2].str()), std::stoi(m[3]), std::stoi(m[4]), preview);
        }
        return error(404, "no route for " + method + " " + path);
    }

    HttpResponse list_reports() const
    {
        nlohmann::json reports = nlohmann::json::array();
        for (const auto& [id, e] : reports_) {
            int axial = 0, sagittal = 0;
            for (const auto& s : e.report.slices)
                if (s.flag) ++(s.view == View::axial ? axial : sagittal);
            reports.push_back({{"volume_id", id},
                               {"flagged", e.report.any_flag()},
                               {"flagged_slices", {{"axial", axial}, {"sagittal", sagittal}}}});
        }
        return json_response({{"schema_version", api_schema_version}, {"volume_ids", volume_ids()}, {"reports", reports}});
    }

    HttpResponse get_report(const std::string& id, std::optional<int> preview) const
    {
        const Entry* e = find(id);
        if (!e) return error(404, "unknown volume '" + id + "'");
        if (!preview) return {200, "application/json", read_file(e->dir / "report.json")};
        const ThresholdConfig t{*preview, *preview};
        nlohmann::json verdicts = nlohmann::json::array();
        for (const auto& v : verdicts_at(e->report, t)) {
            verdicts.push_back({{"view", to_string(v.view)},
                                {"gradient", v.gradient},
                                {"flag_count", e->report.flag_count(v.view, v.gradient)},
                                {"flag", v.flag}});
        }
        return json_response(
            {{"schema_version", api_schema_version}, {"volume_id", id}, {"threshold_preview", *preview}, {"verdicts", verdicts}});
    }

    static const SliceScore* find_slice(const QCReport& r, View view, int g, int idx)
    {
        for (const auto& s : r.slices)
            if (s.view == view && s.gradient == g && s.index == idx) return &s;
        return nullptr;
    }

    /// The PNG thumbnail, or with a preview threshold the slice's score and
    /// the verdict its (view, gradient) stack would get at that threshold.
    HttpResponse get_slice(const std::string& id, View view, int g, int idx, std::optional<int> preview) const
    {
        const Entry* e = find(id);
        if (!e) return error(404, "unknown volume '" + id + "'");
        const SliceScore* s = find_slice(e->report, view, g, idx);
        if (!s) return error(404, "slice not in report");
        if (preview) {
            const int count = e->report.flag_count(view, g);
            return json_response({{"schema_version", api_schema_version},
                                  {"volume_id", id},
                                  {"view", to_string(view)},
                                  {"gradient", g},
                                  {"index", idx},
                                  {"prob", s->prob},
                                  {"flag", s->flag},
                                  {"flag_count", count},
                                  {"threshold_preview", *preview},
                                  {"volume_flag", volume_flag(count, *preview)}});
        }
        const auto png = e->dir / thumbnail_name(view, g, idx);
        if (!std::filesystem::exists(png)) return error(404, "no thumbnail for this slice");
        return {200, "image/png", read_file(png)};
    }

    std::optional<ReviewDecision> parse_decision(const std::string& body, std::string& reason) const
    {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception&) {
            reason = "body is not valid JSON";
            return std::nullopt;
        }
        if (!j.is_object()) {
            reason = "decision must be a JSON object";
            return std::nullopt;
        }
        static const std::vector<std::string> allowed{"volume_id", "view",     "gradient", "index",
                                                      "expert_label", "prior_flag", "reviewer", "timestamp"};
        for (const auto& [k, v] : j.items()) {
            if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
                reason = "unknown key '" + k + "'";
                return std::nullopt;
            }
        }
        for (const char* k : {"volume_id", "view", "gradient", "index", "expert_label"}) {
            if (!j.contains(k)) {
                reason = std::string("missing '") + k + "'";
                return std::nullopt;
            }
        }
        ReviewDecision d;
        try {
            d.volume_id = j.at("volume_id").get<std::string>();
            d.view = parse_view(j.at("view").get<std::string>());
            d.gradient = j.at("gradient").get<int>();
            d.index = j.at("index").get<int>();
            d.expert_label = j.at("expert_label").get<int>();
            if (j.contains("prior_flag")) d.prior_flag = j.at("prior_flag").get<bool>();
            if (j.contains("reviewer")) d.reviewer = j.at("reviewer").get<std::string>();
            if (j.contains("timestamp")) d.timestamp = j.at("timestamp").get<std::string>();
        } catch (const std::exception& e) {
            reason = std::string("bad field: ") + e.what();
            return std::nullopt;
        }
        if (d.expert_label != 0 && d.expert_label != 1) {
            reason = "expert_label must be 0 or 1";
            return std::nullopt;
        }
        const Entry* e = find(d.volume_id);
        if (!e) {
            reason = "unknown volume '" + d.volume_id + "'";
            return std::nullopt;
        }
        const SliceScore* s = find_slice(e->report, d.view, d.gradient, d.index);
        if (!s) {
            reason = "slice " + d.label_row().key() + " is not in the report";
            return std::nullopt;
        }
        if (!j.contains("prior_flag")) d.prior_flag = s->flag;
        if (d.timestamp.empty()) d.timestamp = utc_timestamp();
        return d;
    }

    HttpResponse post_decision(const std::string& body)
    {
        std::string reason;
        const auto d = parse_decision(body, reason);
        if (!d) return error(400, reason);
        std::lock_guard lock(mutex_);
        const bool fresh = !std::filesystem::exists(label_out_) || std::filesystem::file_size(label_out_) == 0;
        {
            std::ofstream out(label_out_, std::ios::app);
            if (fresh) out << label_csv_header << ",source\n";
            out << format_label_row(d->label_row(), true) << "\n";
            if (!out) throw Error("cannot append to '" + label_out_.string() + "'");
        }
        {
            std::ofstream side(sidecar_path(), std::ios::app);
            side << to_json(*d).dump() << "\n";
        }
        decisions_.push_back(d->label_row());
        return json_response(
            {{"schema_version", api_schema_version}, {"accepted", to_json(*d)}, {"decision_count", decisions_.size()}}, 201);
    }

    HttpResponse export_labels() const
    {
        std::lock_guard lock(mutex_);
        auto rows = deduplicate_labels(decisions_);
        for (auto& r : rows) r.source = "expert";
        return {200, "text/csv", format_label_csv(rows, true)};
    }

    std::filesystem::path report_dir_;
    std::filesystem::path label_out_;
    std::map<std::string, Entry> reports_;
    mutable std::mutex mutex_;
    std::vector<LabelRow> decisions_;
};

}  // namespace dwiqc
