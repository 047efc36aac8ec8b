#include "appt/pointcloud.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "appt/rng.hpp"

namespace appt {

namespace {

std::atomic<uint64_t> g_next_group_id{1};

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

double parse_number(std::string_view tok, int line_no) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw ParseError("line " + std::to_string(line_no) + ": expected a number, got \"" +
                         std::string(tok) + "\"");
    }
    if (!std::isfinite(v)) {
        throw ParseError("line " + std::to_string(line_no) + ": non-finite coordinate");
    }
    return v;
}

long parse_count(std::string_view tok, int line_no) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || v < 0) {
        throw ParseError("line " + std::to_string(line_no) + ": expected a count, got \"" +
                         std::string(tok) + "\"");
    }
    return v;
}

PointCloud make_cloud(std::vector<double> coords, std::vector<double> feats, int n, int c) {
    PointCloud cloud;
    cloud.coords = Tensor({n, 3}, std::move(coords));
    if (c > 0) cloud.features = Tensor({n, c}, std::move(feats));
    return cloud;
}

double sq_dist3(const double* a, const double* b) {
    double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

} // namespace

PointCloud parse_xyz(std::istream& in) {
    std::vector<double> coords;
    std::vector<double> feats;
    int cols = -1;
    int n = 0;
    int line_no = 0;
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = strip_cr(raw);
        auto toks = split_ws(line);
        if (toks.empty() || toks[0][0] == '#') continue;
        if (cols == -1) {
            cols = static_cast<int>(toks.size());
            if (cols < 3) {
                throw ParseError("line " + std::to_string(line_no) + ": expected at least 3 columns, got " +
                                 std::to_string(cols));
            }
        } else if (static_cast<int>(toks.size()) != cols) {
            throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(cols) +
                             " columns, got " + std::to_string(toks.size()));
        }
        for (int j = 0; j < 3; ++j) coords.push_back(parse_number(toks[j], line_no));
        for (int j = 3; j < cols; ++j) feats.push_back(parse_number(toks[j], line_no));
        ++n;
    }
    if (n == 0) throw ParseError("no points found");
    return make_cloud(std::move(coords), std::move(feats), n, cols - 3);
}

PointCloud parse_off(std::istream& in) {
    std::string raw;
    int line_no = 0;
    auto next_tokens = [&](std::vector<std::string_view>& toks, std::string& storage) {
        while (std::getline(in, raw)) {
            ++line_no;
            storage = strip_cr(raw);
            toks = split_ws(storage);
            if (!toks.empty() && toks[0][0] != '#') return true;
        }
        return false;
    };

    std::vector<std::string_view> toks;
    std::string storage;
    if (!next_tokens(toks, storage)) throw ParseError("empty OFF stream");
    if (toks[0] != "OFF") throw ParseError("line " + std::to_string(line_no) + ": missing OFF magic");

    long nv = 0, nf = 0;
    if (toks.size() >= 3) {
        // single-line dialect: "OFF nv nf ne"
        nv = parse_count(toks[1], line_no);
        nf = parse_count(toks[2], line_no);
    } else {
        if (!next_tokens(toks, storage) || toks.size() < 2) {
            throw ParseError("line " + std::to_string(line_no) + ": missing vertex/face counts");
        }
        nv = parse_count(toks[0], line_no);
        nf = parse_count(toks[1], line_no);
    }
    if (nv == 0) throw ParseError("OFF declares zero vertices");

    std::vector<double> coords;
    coords.reserve(static_cast<size_t>(nv) * 3);
    for (long i = 0; i < nv; ++i) {
        if (!next_tokens(toks, storage)) {
            throw ParseError("unexpected end of file: read " + std::to_string(i) + " of " +
                             std::to_string(nv) + " declared vertices");
        }
        if (toks.size() < 3) {
            throw ParseError("line " + std::to_string(line_no) + ": vertex needs 3 coordinates");
        }
        for (int j = 0; j < 3; ++j) coords.push_back(parse_number(toks[j], line_no));
    }
    // Faces are not used; consume them to catch truncation.
    for (long i = 0; i < nf; ++i) {
        if (!next_tokens(toks, storage)) {
            throw ParseError("unexpected end of file: read " + std::to_string(i) + " of " +
                             std::to_string(nf) + " declared faces");
        }
    }
    return make_cloud(std::move(coords), {}, static_cast<int>(nv), 0);
}

PointCloud load_cloud(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open point cloud file: " + path);
    std::string ext = std::filesystem::path(path).extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    try {
        if (ext == ".off") return parse_off(in);
        return parse_xyz(in);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
    const int n = cloud.n_points();
    const double* p = cloud.coords.data();
    double cx = 0, cy = 0, cz = 0;
    for (int i = 0; i < n; ++i) {
        cx += p[i * 3];
        cy += p[i * 3 + 1];
        cz += p[i * 3 + 2];
    }
    cx /= n;
    cy /= n;
    cz /= n;
    Tensor out({n, 3});
    double* q = out.data();
    double max_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        q[i * 3] = p[i * 3] - cx;
        q[i * 3 + 1] = p[i * 3 + 1] - cy;
        q[i * 3 + 2] = p[i * 3 + 2] - cz;
        double sq = q[i * 3] * q[i * 3] + q[i * 3 + 1] * q[i * 3 + 1] + q[i * 3 + 2] * q[i * 3 + 2];
        max_sq = std::max(max_sq, sq);
    }
    double scale = max_sq > 0.0 ? 1.0 / std::sqrt(max_sq) : 1.0;
    for (int i = 0; i < 3 * n; ++i) q[i] *= scale;
    PointCloud result;
    result.coords = std::move(out);
    result.features = cloud.features;
    result.label = cloud.label;
    return result;
}

SampledCentroids fps_from(const PointCloud& cloud, int n_s, int start_index) {
    const int n = cloud.n_points();
    if (n_s < 1 || n_s > n) {
        throw ContractError("fps: requested " + std::to_string(n_s) + " centroids from " +
                            std::to_string(n) + " points");
    }
    if (start_index < 0 || start_index >= n) throw ContractError("fps: start index out of range");
    const double* p = cloud.coords.data();
    std::vector<double> min_sq(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
    std::vector<int> picked;
    picked.reserve(static_cast<size_t>(n_s));
    int current = start_index;
    picked.push_back(current);
    for (int s = 1; s < n_s; ++s) {
        const double* c = p + static_cast<int64_t>(current) * 3;
        int best = -1;
        double best_d = -1.0;
        for (int i = 0; i < n; ++i) {
            double d = sq_dist3(p + static_cast<int64_t>(i) * 3, c);
            if (d < min_sq[static_cast<size_t>(i)]) min_sq[static_cast<size_t>(i)] = d;
            // strict >: equal distances keep the smaller index
            if (min_sq[static_cast<size_t>(i)] > best_d) {
                best_d = min_sq[static_cast<size_t>(i)];
                best = i;
            }
        }
        current = best;
        picked.push_back(current);
    }
    SampledCentroids out;
    out.indices = std::move(picked);
    out.coords = Tensor({n_s, 3});
    double* q = out.coords.data();
    for (int s = 0; s < n_s; ++s) {
        const double* src = p + static_cast<int64_t>(out.indices[static_cast<size_t>(s)]) * 3;
        std::copy_n(src, 3, q + static_cast<int64_t>(s) * 3);
    }
    return out;
}

SampledCentroids fps(const PointCloud& cloud, int n_s, uint64_t seed) {
    Rng rng(seed);
    int start = rng.uniform_int(0, cloud.n_points() - 1);
    return fps_from(cloud, n_s, start);
}

PointGroups knn_group(const PointCloud& cloud, const SampledCentroids& centroids, int k) {
    const int n = cloud.n_points();
    const int n_s = static_cast<int>(centroids.indices.size());
    if (k < 1 || k > n) {
        throw ContractError("knn_group: k = " + std::to_string(k) + " with " + std::to_string(n) +
                            " points");
    }
    const int c = cloud.n_features();
    const int w = 3 + c;
    const double* p = cloud.coords.data();
    const double* f = c > 0 ? cloud.features.data() : nullptr;

    PointGroups out;
    out.groups = Tensor({n_s, k, w});
    out.centroid_coords = centroids.coords;
    out.id = g_next_group_id.fetch_add(1);
    double* q = out.groups.data();

    std::vector<std::pair<double, int>> dist(static_cast<size_t>(n));
    for (int s = 0; s < n_s; ++s) {
        const double* cp = centroids.coords.data() + static_cast<int64_t>(s) * 3;
        for (int i = 0; i < n; ++i) {
            dist[static_cast<size_t>(i)] = {sq_dist3(p + static_cast<int64_t>(i) * 3, cp), i};
        }
        std::partial_sort(dist.begin(), dist.begin() + k, dist.end()); // (distance, index) pairs
        for (int j = 0; j < k; ++j) {
            const int idx = dist[static_cast<size_t>(j)].second;
            double* row = q + (static_cast<int64_t>(s) * k + j) * w;
            const double* src = p + static_cast<int64_t>(idx) * 3;
            row[0] = src[0] - cp[0];
            row[1] = src[1] - cp[1];
            row[2] = src[2] - cp[2];
            if (f) std::copy_n(f + static_cast<int64_t>(idx) * c, c, row + 3);
        }
    }
    return out;
}

const std::vector<std::string>& surface_kind_names() {
    static const std::vector<std::string> names = {"sphere", "cube", "cylinder", "torus"};
    return names;
}

SurfaceKind parse_surface_kind(const std::string& name) {
    const auto& names = surface_kind_names();
    for (size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return static_cast<SurfaceKind>(i);
    }
    std::string valid;
    for (const auto& n : names) {
        if (!valid.empty()) valid += ", ";
        valid += n;
    }
    throw ConfigError("unknown surface kind \"" + name + "\" (valid: " + valid + ")");
}

std::string surface_kind_name(SurfaceKind kind) {
    return surface_kind_names()[static_cast<size_t>(kind)];
}

namespace {

void sample_sphere(Rng& rng, double* p) {
    // isotropic direction via normalized Gaussian
    double x, y, z, sq;
    do {
        x = rng.normal(0, 1);
        y = rng.normal(0, 1);
        z = rng.normal(0, 1);
        sq = x * x + y * y + z * z;
    } while (sq < 1e-12);
    double inv = 1.0 / std::sqrt(sq);
    p[0] = x * inv;
    p[1] = y * inv;
    p[2] = z * inv;
}

void sample_cube(Rng& rng, double* p) {
    // side 1 centered at the origin; faces picked uniformly
    int face = rng.uniform_int(0, 5);
    double u = rng.uniform(-0.5, 0.5);
    double v = rng.uniform(-0.5, 0.5);
    int axis = face / 2;
    double sign = (face % 2 == 0) ? 0.5 : -0.5;
    p[axis] = sign;
    p[(axis + 1) % 3] = u;
    p[(axis + 2) % 3] = v;
}

void sample_cylinder(Rng& rng, double* p) {
    // radius 0.5, height 1, capped; area-weighted choice of lateral vs caps
    const double r = 0.5, h = 1.0;
    const double lateral = 2.0 * M_PI * r * h;
    const double caps = 2.0 * M_PI * r * r;
    if (rng.uniform() < lateral / (lateral + caps)) {
        double theta = rng.uniform(0.0, 2.0 * M_PI);
        p[0] = r * std::cos(theta);
        p[1] = r * std::sin(theta);
        p[2] = rng.uniform(-h / 2, h / 2);
    } else {
        double rad = r * std::sqrt(rng.uniform());
        double theta = rng.uniform(0.0, 2.0 * M_PI);
        p[0] = rad * std::cos(theta);
        p[1] = rad * std::sin(theta);
        p[2] = rng.uniform() < 0.5 ? h / 2 : -h / 2;
    }
}

void sample_torus(Rng& rng, double* p) {
    // ring radius 0.75, tube radius 0.25; rejection in phi for uniform area
    const double R = 0.75, r = 0.25;
    double theta = rng.uniform(0.0, 2.0 * M_PI);
    double phi;
    for (;;) {
        phi = rng.uniform(0.0, 2.0 * M_PI);
        double w = (R + r * std::cos(phi)) / (R + r);
        if (rng.uniform() < w) break;
    }
    p[0] = (R + r * std::cos(phi)) * std::cos(theta);
    p[1] = (R + r * std::cos(phi)) * std::sin(theta);
    p[2] = r * std::sin(phi);
}

} // namespace

PointCloud gen_synthetic(SurfaceKind kind, int n, double noise_sigma, uint64_t seed) {
    if (n < 8) throw ContractError("gen_synthetic: need at least 8 points");
    Rng rng(seed);
    Tensor coords({n, 3});
    double* p = coords.data();
    for (int i = 0; i < n; ++i) {
        double* row = p + static_cast<int64_t>(i) * 3;
        switch (kind) {
            case SurfaceKind::Sphere: sample_sphere(rng, row); break;
            case SurfaceKind::Cube: sample_cube(rng, row); break;
            case SurfaceKind::Cylinder: sample_cylinder(rng, row); break;
            case SurfaceKind::Torus: sample_torus(rng, row); break;
        }
        if (noise_sigma > 0.0) {
            row[0] += rng.normal(0, noise_sigma);
            row[1] += rng.normal(0, noise_sigma);
            row[2] += rng.normal(0, noise_sigma);
        }
    }
    PointCloud cloud;
    cloud.coords = std::move(coords);
    cloud.label = static_cast<int>(kind);
    return cloud;
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    DatasetManifest m;
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = strip_cr(raw);
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto toks = split_ws(line);
            if (toks.size() >= 4 && toks[1] == "class") {
                size_t id = static_cast<size_t>(parse_count(toks[2], line_no));
                if (m.class_names.size() <= id) m.class_names.resize(id + 1);
                m.class_names[id] = std::string(toks[3]);
            } else if (toks.size() >= 3 && toks[1] == "split") {
                m.split = std::string(toks[2]);
            }
            continue;
        }
        size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ParseError(path + ": line " + std::to_string(line_no) +
                             ": expected \"path<TAB>label\"");
        }
        DatasetManifest::Entry e;
        e.path = line.substr(0, tab);
        e.label = static_cast<int>(parse_count(std::string_view(line).substr(tab + 1), line_no));
        m.entries.push_back(std::move(e));
    }
    for (const auto& e : m.entries) {
        if (!m.class_names.empty() && e.label >= static_cast<int>(m.class_names.size())) {
            throw ParseError(path + ": label " + std::to_string(e.label) +
                             " outside the class table (" + std::to_string(m.class_names.size()) +
                             " classes)");
        }
    }
    return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    std::ostringstream out;
    out << "# appt dataset manifest\n";
    if (!manifest.split.empty()) out << "# split " << manifest.split << "\n";
    for (size_t i = 0; i < manifest.class_names.size(); ++i) {
        out << "# class " << i << " " << manifest.class_names[i] << "\n";
    }
    for (const auto& e : manifest.entries) {
        out << e.path << "\t" << e.label << "\n";
    }
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write manifest: " + path);
        f << out.str();
    }
    std::filesystem::rename(tmp, path);
}

} // namespace appt
