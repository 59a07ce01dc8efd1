#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/image.hpp"

namespace dwiqc {

/// One row of a label CSV.
struct LabelRow {
    std::string volume_id;
    View view = View::axial;
    int gradient_index = 0;
    int slice_index = 0;
    Label label = Label::artifact_free;
    std::string source;  // empty for benchmark labels, "expert" for review decisions

    std::string key() const
    {
        return volume_id + ":" + std::string(to_string(view)) + ":" + std::to_string(gradient_index) + ":" +
               std::to_string(slice_index);
    }
};

inline constexpr const char* label_csv_header = "volume_id,view,gradient_index,slice_index,label";

namespace labels_detail {

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline int parse_int(const std::string& s, const std::string& what, std::size_t line_no)
{
    try {
        std::size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw Error("label CSV line " + std::to_string(line_no) + ": invalid " + what + " '" + s + "'");
    }
}

}  // namespace labels_detail

inline std::string format_label_row(const LabelRow& r, bool with_source)
{
    std::string line = r.volume_id + "," + std::string(to_string(r.view)) + "," + std::to_string(r.gradient_index) +
                       "," + std::to_string(r.slice_index) + "," + std::to_string(to_int(r.label));
    if (with_source) line += "," + r.source;
    return line;
}

/// Parses a label CSV, with or without the trailing `source` column.
inline std::vector<LabelRow> parse_label_csv(std::istream& in, const std::string& origin = "<stream>")
{
    using namespace labels_detail;
    std::string line;
    if (!std::getline(in, line)) throw Error("label CSV '" + origin + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool with_source = false;
    if (line == std::string(label_csv_header) + ",source") {
        with_source = true;
    } else if (line != label_csv_header) {
        throw Error("label CSV '" + origin + "' has unexpected header '" + line + "'");
    }
    std::vector<LabelRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        const std::size_t expected = with_source ? 6 : 5;
        if (f.size() != expected) {
            throw Error("label CSV '" + origin + "' line " + std::to_string(line_no) + ": expected " +
                        std::to_string(expected) + " fields, got " + std::to_string(f.size()));
        }
        LabelRow r;
        r.volume_id = f[0];
        if (r.volume_id.empty()) throw Error("label CSV line " + std::to_string(line_no) + ": empty volume_id");
        r.view = parse_view(f[1]);
        r.gradient_index = parse_int(f[2], "gradient_index", line_no);
        r.slice_index = parse_int(f[3], "slice_index", line_no);
        const int lab = parse_int(f[4], "label", line_no);
        if (lab != 0 && lab != 1) {
            throw Error("label CSV line " + std::to_string(line_no) + ": label must be 0 or 1");
        }
        r.label = label_from_int(lab);
        if (with_source) r.source = f[5];
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::vector<LabelRow> read_label_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open label CSV '" + path.string() + "'");
    return parse_label_csv(in, path.string());
}

inline std::string format_label_csv(const std::vector<LabelRow>& rows, bool with_source = false)
{
    std::string out = label_csv_header;
    if (with_source) out += ",source";
    out += "\n";
    for (const auto& r : rows) out += format_label_row(r, with_source) + "\n";
    return out;
}

inline void write_label_csv(const std::filesystem::path& path, const std::vector<LabelRow>& rows,
                            bool with_source = false)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write label CSV '" + path.string() + "'");
    out << format_label_csv(rows, with_source);
    if (!out) throw Error("failed writing label CSV '" + path.string() + "'");
}

/// Collapses repeated slice keys; the last occurrence wins.
inline std::vector<LabelRow> deduplicate_labels(const std::vector<LabelRow>& rows)
{
    std::map<std::string, std::size_t> last;
    for (std::size_t i = 0; i < rows.size(); ++i) last[rows[i].key()] = i;
    std::vector<LabelRow> out;
    out.reserve(last.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (last[rows[i].key()] == i) out.push_back(rows[i]);
    }
    return out;
}

}  // namespace dwiqc
