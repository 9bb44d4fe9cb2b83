// Test stand-in for an external classifier: fake_classifier <mode> <batch.csv> <scores.csv>
//   ok         score = mean pixel / 255
//   omit       drop the last cell
//   range      first score 1.5
//   dup        repeat the first row
//   unknown    add a cell that was not asked for
//   fail       exit 3
//   flaky=<f>  fail unless marker file f exists, then create it
//   silent     exit 0 without output
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "cytopipe/io.hpp"

namespace fs = std::filesystem;
using namespace cytopipe;

int main(int argc, char** argv) {
    if (argc != 4) {
        std::cerr << "usage: fake_classifier <mode> <in> <out>\n";
        return 64;
    }
    const std::string mode = argv[1];
    if (mode == "fail") return 3;
    if (mode == "silent") return 0;
    if (mode.rfind("flaky=", 0) == 0) {
        const fs::path marker = mode.substr(6);
        if (!fs::exists(marker)) {
            std::ofstream(marker) << "1";
            return 3;
        }
    }
    const CsvTable batch = read_csv(argv[2], {"cell_id", "path"});
    std::vector<std::pair<std::string, std::string>> rows;
    for (const auto& r : batch.rows) {
        const ImageU8 img = read_png(r[1]);
        const double sum = std::accumulate(img.buffer().begin(), img.buffer().end(), 0.0);
        rows.emplace_back(r[0], format_double(sum / double(img.size()) / 255.0));
    }
    if (mode == "omit" && !rows.empty()) rows.pop_back();
    if (mode == "range" && !rows.empty()) rows[0].second = "1.5";
    if (mode == "dup" && !rows.empty()) rows.push_back(rows[0]);
    if (mode == "unknown") rows.emplace_back("no_such_cell", "0.5");
    std::ofstream out(argv[3]);
    out << "cell_id,score\n";
    for (const auto& [id, s] : rows) out << id << "," << s << "\n";
    return 0;
}
