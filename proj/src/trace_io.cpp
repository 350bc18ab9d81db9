#include "icl/trace_io.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "icl/errors.hpp"

namespace icl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'I', 'C', 'L', 'T'};
constexpr std::size_t kHeaderBytes = 16;

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::vector<std::uint8_t>& in, std::size_t at, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t{in[at + static_cast<std::size_t>(i)]} << (8 * i);
    return v;
}

std::ofstream open_text(const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os.precision(17);
    return os;
}

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

std::string mat_name(std::int64_t step, const std::string& name) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "mats/step_%08lld_%s.mat", static_cast<long long>(step), name.c_str());
    return buf;
}

}  // namespace

std::vector<std::uint8_t> encode_mat(const Matrix& m) {
    if (m.rows() > 0xFFFFFFFFll || m.cols() > 0xFFFFFFFFll) throw InvalidInput("encode_mat: matrix too large");
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_le(out, kTraceFormatVersion, 2);
    out.push_back(1);  // float64
    out.push_back(0);
    put_le(out, static_cast<std::uint64_t>(m.rows()), 4);
    put_le(out, static_cast<std::uint64_t>(m.cols()), 4);
    out.reserve(kHeaderBytes + static_cast<std::size_t>(m.size()) * 8);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            std::uint64_t bits = 0;
            const double v = m(r, c);
            std::memcpy(&bits, &v, sizeof bits);
            put_le(out, bits, 8);
        }
    return out;
}

Matrix decode_mat(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    if (bytes.size() < kHeaderBytes) throw FormatError(origin, "truncated header");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError(origin, "bad magic (expected ICLT)");
    const auto version = get_le(bytes, 4, 2);
    if (version != kTraceFormatVersion)
        throw FormatError(origin, "unsupported version " + std::to_string(version));
    if (bytes[6] != 1) throw FormatError(origin, "unsupported dtype " + std::to_string(bytes[6]));
    const auto rows = get_le(bytes, 8, 4);
    const auto cols = get_le(bytes, 12, 4);
    if (bytes.size() != kHeaderBytes + rows * cols * 8)
        throw FormatError(origin, "payload is " + std::to_string(bytes.size() - kHeaderBytes) + " bytes, expected " +
                                      std::to_string(rows * cols * 8));
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::size_t at = kHeaderBytes;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c, at += 8) {
            const std::uint64_t bits = get_le(bytes, at, 8);
            double v = 0.0;
            std::memcpy(&v, &bits, sizeof v);
            m(r, c) = v;
        }
    return m;
}

void write_mat(const std::string& path, const Matrix& m) {
    const std::vector<std::uint8_t> bytes = encode_mat(m);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Matrix read_mat(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path, "cannot open");
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_mat(bytes, path);
}

json distribution_json(const SpectralTaskDistribution& dist) {
    json lambda = json::array();
    for (const Vector& l : dist.task_spectra) lambda.push_back(std::vector<double>(l.data(), l.data() + l.size()));
    return {{"U", matrix_json(dist.eigenbasis)},
            {"S", std::vector<double>(dist.spectrum.data(), dist.spectrum.data() + dist.spectrum.size())},
            {"Lambda", lambda},
            {"N", dist.context_length},
            {"seed", dist.seed}};
}

void write_checkpoint_trace(const std::string& dir, const CheckpointTrace& trace, const json& config,
                            const json& distribution) {
    fs::create_directories(fs::path(dir) / "mats");
    json steps = json::array();
    for (const Checkpoint& c : trace.checkpoints()) {
        json files = json::object();
        for (const auto& [name, m] : c.matrices) {
            const std::string rel = mat_name(c.step, name);
            write_mat((fs::path(dir) / rel).string(), m);
            files[name] = rel;
        }
        json entry{{"step", c.step}, {"files", files}};
        json metrics = json::object();
        for (const auto& [name, v] : c.metrics) {
            if (name == "loss") entry["loss"] = v;
            else metrics[name] = v;
        }
        if (!metrics.empty()) entry["metrics"] = metrics;
        steps.push_back(entry);
    }
    json manifest{{"format_version", kTraceFormatVersion},
                  {"source", trace.source},
                  {"config", config},
                  {"distribution", distribution},
                  {"steps", steps}};
    std::ofstream os = open_text(fs::path(dir) / "manifest.json");
    os << manifest.dump(1) << '\n';
}

void write_training_trace(const std::string& dir, const ExperimentConfig& config, const SpectralTaskDistribution& dist,
                          const TrainingTrace& trace, const std::vector<double>& snapshot_loss) {
    if (snapshot_loss.size() != trace.snapshots.size())
        throw InvalidInput("write_training_trace: one loss per snapshot required");
    CheckpointTrace ct;
    ct.source = "icl-lab simulate";
    for (std::size_t i = 0; i < trace.snapshots.size(); ++i) {
        const Snapshot& s = trace.snapshots[i];
        Checkpoint c;
        c.step = s.step;
        c.metrics["loss"] = snapshot_loss[i];
        c.metrics["batch_loss"] = s.loss;
        c.metrics["conserved"] = s.conserved;
        const ModelParams& p = s.params;
        c.matrices["p1"] = p.p1();
        c.matrices["p2"] = p.p2();
        c.matrices["q1"] = p.q1();
        c.matrices["q2"] = p.q2();
        ct.append(std::move(c));
    }
    write_checkpoint_trace(dir, ct, to_json(config), distribution_json(dist));

    const std::size_t d = dist.d;
    const double per_epoch = static_cast<double>(trace.steps_per_epoch);
    {
        std::ofstream os = open_text(fs::path(dir) / "curves.csv");
        os << "step,epoch,loss,batch_loss,C";
        for (std::size_t a = 1; a <= d; ++a) os << ",a_" << a;
        os << ",offdiag_norm\n";
        for (std::size_t i = 0; i < trace.snapshots.size(); ++i) {
            const Snapshot& s = trace.snapshots[i];
            os << s.step << ',' << static_cast<double>(s.step) / per_epoch << ',' << snapshot_loss[i] << ',' << s.loss
               << ',' << s.conserved;
            for (Eigen::Index a = 0; a < s.a.size(); ++a) os << ',' << s.a(a);
            os << ',' << s.offdiag_norm << '\n';
        }
    }
    {
        std::ofstream os = open_text(fs::path(dir) / "epochs.csv");
        os << "epoch,mean_loss,C";
        for (std::size_t a = 1; a <= d; ++a) os << ",a_" << a;
        os << ",offdiag_norm\n";
        // Epoch 0 row: the initial state, with the first step's loss.
        os << 0 << ',' << trace.initial.loss << ',' << trace.initial.conserved;
        for (Eigen::Index a = 0; a < trace.initial.a.size(); ++a) os << ',' << trace.initial.a(a);
        os << ',' << trace.initial.offdiag_norm << '\n';
        for (const EpochSummary& e : trace.epochs) {
            os << e.epoch << ',' << e.mean_loss << ',' << e.conserved;
            for (Eigen::Index a = 0; a < e.a.size(); ++a) os << ',' << e.a(a);
            os << ',' << e.offdiag_norm << '\n';
        }
    }
}

LoadedTrace read_trace_directory(const std::string& dir) {
    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    std::ifstream in(manifest_path);
    if (!in) throw FormatError(manifest_path, "cannot open");
    LoadedTrace out;
    try {
        out.manifest = json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(manifest_path, e.what());
    }
    const json& m = out.manifest;
    if (!m.is_object() || !m.contains("format_version") || !m["format_version"].is_number_integer())
        throw FormatError(manifest_path, "missing format_version");
    if (m["format_version"].get<int>() != kTraceFormatVersion)
        throw FormatError(manifest_path, "unsupported format_version " + m["format_version"].dump());
    if (!m.contains("steps") || !m["steps"].is_array()) throw FormatError(manifest_path, "missing steps array");
    if (m.contains("source") && m["source"].is_string()) out.trace.source = m["source"].get<std::string>();
    else out.trace.source = dir;

    for (const json& entry : m["steps"]) {
        if (!entry.is_object() || !entry.contains("step") || !entry["step"].is_number_integer())
            throw FormatError(manifest_path, "step entry without an integer 'step'");
        Checkpoint c;
        c.step = entry["step"].get<std::int64_t>();
        if (entry.contains("loss")) {
            if (!entry["loss"].is_number()) throw FormatError(manifest_path, "non-numeric loss");
            c.metrics["loss"] = entry["loss"].get<double>();
        }
        if (entry.contains("metrics")) {
            if (!entry["metrics"].is_object()) throw FormatError(manifest_path, "metrics must be an object");
            for (const auto& [name, v] : entry["metrics"].items()) {
                if (!v.is_number()) throw FormatError(manifest_path, "non-numeric metric '" + name + "'");
                c.metrics[name] = v.get<double>();
            }
        }
        if (entry.contains("files")) {
            if (!entry["files"].is_object()) throw FormatError(manifest_path, "files must be an object");
            for (const auto& [name, rel] : entry["files"].items()) {
                if (!rel.is_string()) throw FormatError(manifest_path, "file path for '" + name + "' is not a string");
                c.matrices[name] = read_mat((fs::path(dir) / rel.get<std::string>()).string());
            }
        }
        try {
            out.trace.append(std::move(c));
        } catch (const InvalidInput& e) {
            throw FormatError(manifest_path, e.what());
        }
    }
    return out;
}

std::vector<double> CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] != name) continue;
        std::vector<double> out;
        for (const auto& row : rows) out.push_back(row[i]);
        return out;
    }
    throw FormatError(origin, "missing column '" + name + "'");
}

bool CsvTable::has_column(const std::string& name) const {
    for (const std::string& h : header)
        if (h == name) return true;
    return false;
}

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(path, "cannot open");
    CsvTable t;
    t.origin = path;
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path, "empty file");
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) t.header.push_back(cell);
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<double> row;
        std::size_t start = 0;
        while (true) {
            const std::size_t end = line.find(',', start);
            const std::string cell = line.substr(start, end == std::string::npos ? std::string::npos : end - start);
            if (cell.empty()) {
                row.push_back(std::nan(""));
            } else {
                try {
                    std::size_t used = 0;
                    row.push_back(std::stod(cell, &used));
                    if (used != cell.size()) throw std::invalid_argument(cell);
                } catch (const std::exception&) {
                    throw FormatError(path, "line " + std::to_string(line_no) + ": not a number '" + cell + "'");
                }
            }
            if (end == std::string::npos) break;
            start = end + 1;
        }
        if (row.size() != t.header.size())
            throw FormatError(path, "line " + std::to_string(line_no) + ": expected " +
                                        std::to_string(t.header.size()) + " cells");
        t.rows.push_back(std::move(row));
    }
    return t;
}

}  // namespace icl
