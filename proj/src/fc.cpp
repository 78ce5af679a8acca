#include "gcan/fc.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "gcan/csv.hpp"
#include "gcan/error.hpp"

namespace fs = std::filesystem;

namespace gcan {

std::string_view to_string(Label label) {
    switch (label) {
        case Label::HC: return "HC";
        case Label::SCD: return "SCD";
        case Label::MCI: return "MCI";
    }
    return "?";
}

std::string_view to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Label parse_label(std::string_view text) {
    text = csv::trim(text);
    if (text == "HC") return Label::HC;
    if (text == "SCD") return Label::SCD;
    if (text == "MCI") return Label::MCI;
    throw ParameterError("unknown label '" + std::string(text) + "' (expected HC, SCD or MCI)");
}

Split parse_split(std::string_view text) {
    text = csv::trim(text);
    if (text == "train") return Split::Train;
    if (text == "val") return Split::Val;
    if (text == "test") return Split::Test;
    throw ParameterError("unknown split '" + std::string(text) + "' (expected train, val or test)");
}

// ---- atlas -----------------------------------------------------------------

AtlasPartition::AtlasPartition(std::vector<Network> networks) : networks_(std::move(networks)) {
    if (networks_.empty()) throw ParameterError("atlas needs at least one network");
    std::set<std::string> names;
    for (const auto& n : networks_) {
        if (n.name.empty()) throw ParameterError("atlas network with empty name");
        if (n.region_count < 1)
            throw ParameterError("atlas network '" + n.name + "' has region count " + std::to_string(n.region_count));
        if (!names.insert(n.name).second) throw ParameterError("duplicate atlas network '" + n.name + "'");
        offsets_.push_back(total_);
        total_ += n.region_count;
    }
}

AtlasPartition AtlasPartition::default_partition() {
    return AtlasPartition({{"CER", 18}, {"CON", 32}, {"DMN", 34}, {"OCC", 22}, {"FPN", 21}, {"SMN", 33}});
}

int AtlasPartition::network_of(int region) const {
    if (region < 0 || region >= total_) throw ParameterError("region " + std::to_string(region) + " out of range");
    const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), region);
    return static_cast<int>(it - offsets_.begin()) - 1;
}

const std::string& AtlasPartition::network_name_of(int region) const {
    return networks_[static_cast<std::size_t>(network_of(region))].name;
}

AtlasPtr make_atlas(AtlasPartition atlas) { return std::make_shared<const AtlasPartition>(std::move(atlas)); }

AtlasPartition load_atlas(const fs::path& path) {
    const auto lines = csv::read_lines(path);
    std::vector<Network> networks;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto line = csv::trim(lines[i]);
        if (line.empty()) continue;
        const auto cells = csv::split(line);
        if (cells.size() != 2) throw ParseError("atlas line must have 2 fields", i + 1, cells.size());
        const auto count = csv::parse_int(cells[1]);
        if (!count) {
            if (networks.empty() && csv::trim(cells[0]) == "network") continue;  // header
            throw ParseError("non-numeric region count", i + 1, 2);
        }
        networks.push_back({std::string(csv::trim(cells[0])), static_cast<int>(*count)});
    }
    return AtlasPartition(std::move(networks));
}

void save_atlas(const AtlasPartition& atlas, const fs::path& path) {
    std::string text = "network,region_count\n";
    for (const auto& n : atlas.networks()) text += n.name + "," + std::to_string(n.region_count) + "\n";
    csv::write_text(path, text);
}

// ---- FC matrix -------------------------------------------------------------

namespace {

void require_atlas_shape(const AtlasPtr& atlas, const Matrix& values) {
    if (!atlas) throw ParameterError("FC matrix requires an atlas");
    const auto n = static_cast<std::size_t>(atlas->total_regions());
    if (values.rows() != n || values.cols() != n)
        throw ShapeError("FC matrix is " + std::to_string(values.rows()) + "x" + std::to_string(values.cols()) +
                         " but the atlas has " + std::to_string(n) + " regions");
}

}  // namespace

FcMatrix::FcMatrix(AtlasPtr atlas, Matrix values) : atlas_(std::move(atlas)), values_(std::move(values)) {
    require_atlas_shape(atlas_, values_);
    const std::size_t n = values_.rows();
    for (std::size_t i = 0; i < n; ++i) {
        if (values_(i, i) != 1.0) throw ParameterError("FC diagonal entry " + std::to_string(i) + " is not 1");
        for (std::size_t j = 0; j < n; ++j) {
            const double v = values_(i, j);
            if (!(v >= -1.0 && v <= 1.0)) throw ParameterError("FC entry outside [-1, 1]");
            if (v != values_(j, i)) throw ParameterError("FC matrix is not symmetric");
        }
    }
}

FcMatrix FcMatrix::repaired(AtlasPtr atlas, Matrix values, std::vector<std::string>* repairs) {
    require_atlas_shape(atlas, values);
    const std::size_t n = values.rows();
    std::size_t asym = 0, clamped = 0, diag = 0, nonfinite = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double a = values(i, j), b = values(j, i);
            if (a != b) {
                ++asym;
                const double m = 0.5 * (a + b);
                values(i, j) = m;
                values(j, i) = m;
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double& v = values(i, j);
            if (i == j) {
                if (v != 1.0) ++diag;
                v = 1.0;
                continue;
            }
            if (!std::isfinite(v)) {
                ++nonfinite;
                v = 0.0;
            } else if (v < -1.0 || v > 1.0) {
                ++clamped;
                v = std::clamp(v, -1.0, 1.0);
            }
        }
    }
    if (repairs) {
        if (asym) repairs->push_back("symmetrized " + std::to_string(asym) + " asymmetric entry pairs");
        if (clamped) repairs->push_back("clamped " + std::to_string(clamped) + " entries into [-1, 1]");
        if (diag) repairs->push_back("forced " + std::to_string(diag) + " diagonal entries to 1");
        if (nonfinite) repairs->push_back("replaced " + std::to_string(nonfinite) + " non-finite entries with 0");
    }
    return FcMatrix(std::move(atlas), std::move(values));
}

FcMatrix FcMatrix::identity(AtlasPtr atlas) {
    const auto n = static_cast<std::size_t>(atlas->total_regions());
    return FcMatrix(std::move(atlas), Matrix::identity(n));
}

bool same_atlas(const FcMatrix& a, const FcMatrix& b) {
    return a.atlas_ptr() == b.atlas_ptr() || a.atlas() == b.atlas();
}

LoadedFc load_fc(const fs::path& path, AtlasPtr atlas) {
    const auto lines = csv::read_lines(path);
    std::vector<std::vector<double>> rows;
    for (std::size_t r = 0; r < lines.size(); ++r) {
        if (csv::trim(lines[r]).empty()) continue;
        const auto cells = csv::split(lines[r]);
        std::vector<double> row;
        row.reserve(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const auto v = csv::parse_double(cells[c]);
            if (!v) throw ParseError("non-numeric FC cell '" + std::string(csv::trim(cells[c])) + "' in " + path.string(),
                                     r + 1, c + 1);
            row.push_back(*v);
        }
        rows.push_back(std::move(row));
    }
    const auto n = static_cast<std::size_t>(atlas->total_regions());
    if (rows.size() != n)
        throw ShapeError(path.string() + ": " + std::to_string(rows.size()) + " rows, atlas expects " + std::to_string(n));
    Matrix m(n, n);
    for (std::size_t r = 0; r < n; ++r) {
        if (rows[r].size() != n)
            throw ShapeError(path.string() + ": row " + std::to_string(r + 1) + " has " + std::to_string(rows[r].size()) +
                             " columns, atlas expects " + std::to_string(n));
        std::copy(rows[r].begin(), rows[r].end(), m.data().begin() + static_cast<std::ptrdiff_t>(r * n));
    }
    std::vector<std::string> repairs;
    FcMatrix fc = FcMatrix::repaired(std::move(atlas), std::move(m), &repairs);
    return {std::move(fc), std::move(repairs)};
}

void save_fc(const FcMatrix& fc, const fs::path& path) {
    const std::size_t n = static_cast<std::size_t>(fc.size());
    std::string text;
    text.reserve(n * n * 12);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j) text += ',';
            text += csv::format_double(fc(i, j));
        }
        text += '\n';
    }
    csv::write_text(path, text);
}

// ---- cohort ----------------------------------------------------------------

Cohort::Cohort(AtlasPtr atlas) : atlas_(std::move(atlas)) {
    if (!atlas_) throw ParameterError("cohort requires an atlas");
}

void Cohort::add(Subject subject, Split split) {
    if (subject.id.empty()) throw ParameterError("subject id must not be empty");
    if (index_.count(subject.id)) throw ParameterError("duplicate subject id '" + subject.id + "'");
    if (!(subject.fc.atlas() == *atlas_))
        throw AtlasMismatchError("subject '" + subject.id + "' uses a different atlas than the cohort");
    index_[subject.id] = subjects_.size();
    splits_[subject.id] = split;
    subjects_.push_back(std::move(subject));
}

Split Cohort::split_of(const std::string& id) const {
    auto it = splits_.find(id);
    if (it == splits_.end()) throw ParameterError("unknown subject '" + id + "'");
    return it->second;
}

const Subject& Cohort::subject(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ParameterError("unknown subject '" + id + "'");
    return subjects_[it->second];
}

std::vector<const Subject*> Cohort::select(Label label, Split split) const {
    std::vector<const Subject*> out;
    for (const auto& s : subjects_)
        if (s.label == label && splits_.at(s.id) == split) out.push_back(&s);
    return out;
}

std::vector<const Subject*> Cohort::select(Split split) const {
    std::vector<const Subject*> out;
    for (const auto& s : subjects_)
        if (splits_.at(s.id) == split) out.push_back(&s);
    return out;
}

FcMatrix mean_fc(const Cohort& cohort, Label label, Split split) {
    const auto members = cohort.select(label, split);
    if (members.empty())
        throw EmptyClassError("no " + std::string(to_string(label)) + " subjects in the " + std::string(to_string(split)) +
                              " split");
    const auto n = static_cast<std::size_t>(cohort.atlas().total_regions());
    Matrix acc(n, n);
    for (const Subject* s : members) {
        auto src = s->fc.values().data();
        auto dst = acc.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    const double inv = 1.0 / static_cast<double>(members.size());
    for (double& v : acc.data()) v *= inv;
    if (members.size() == 1) return members.front()->fc;
    return FcMatrix::repaired(cohort.atlas_ptr(), std::move(acc));
}

Matrix add_noise(const FcMatrix& fc, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0)) throw ParameterError("noise sigma must be non-negative");
    Matrix out = fc.values();
    if (sigma == 0.0) return out;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, sigma);
    const std::size_t n = out.rows();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            const double g = dist(rng);
            out(i, j) += g;
            if (j != i) out(j, i) += g;
        }
    }
    return out;
}

void save_cohort(const Cohort& cohort, const fs::path& dir) {
    fs::create_directories(dir / "fc");
    std::string manifest = "id,label,split,fc_path\n";
    for (const auto& s : cohort.subjects()) {
        const std::string rel = "fc/" + s.id + ".csv";
        save_fc(s.fc, dir / rel);
        manifest += s.id + "," + std::string(to_string(s.label)) + "," + std::string(to_string(cohort.split_of(s.id))) +
                    "," + rel + "\n";
    }
    csv::write_text(dir / "manifest.csv", manifest);
}

Cohort load_cohort(const fs::path& manifest, AtlasPtr atlas) {
    const auto lines = csv::read_lines(manifest);
    Cohort cohort(atlas);
    const fs::path base = manifest.parent_path();
    bool header_seen = false;
    for (std::size_t r = 0; r < lines.size(); ++r) {
        if (csv::trim(lines[r]).empty()) continue;
        const auto cells = csv::split(lines[r]);
        if (cells.size() != 4) throw ParseError("manifest line must have 4 fields", r + 1, cells.size());
        if (!header_seen) {
            header_seen = true;
            if (csv::trim(cells[0]) == "id") continue;
        }
        fs::path fc_path(std::string(csv::trim(cells[3])));
        if (fc_path.is_relative()) fc_path = base / fc_path;
        auto loaded = load_fc(fc_path, atlas);
        cohort.add({std::string(csv::trim(cells[0])), parse_label(cells[1]), std::move(loaded.fc)}, parse_split(cells[2]));
    }
    return cohort;
}

}  // namespace gcan
