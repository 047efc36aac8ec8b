#include "appt/oracles.hpp"

#include <algorithm>
#include <cmath>

namespace appt {

Tensor matmul_ref(const Tensor& a, const Tensor& b) {
    const int m = a.rows(), k = a.cols(), n = b.cols();
    if (k != b.rows()) throw ContractError("matmul_ref: inner dimensions differ");
    Tensor c({m, n});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk) acc += a.at(i, kk) * b.at(kk, j);
            c.at(i, j) = acc;
        }
    }
    return c;
}

double gelu_erf_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

std::vector<double> softmax_ref(const std::vector<double>& row) {
    long double mx = row[0];
    for (double v : row) mx = std::max<long double>(mx, v);
    long double sum = 0.0L;
    std::vector<long double> e(row.size());
    for (size_t i = 0; i < row.size(); ++i) {
        e[i] = expl(static_cast<long double>(row[i]) - mx);
        sum += e[i];
    }
    std::vector<double> out(row.size());
    for (size_t i = 0; i < row.size(); ++i) out[i] = static_cast<double>(e[i] / sum);
    return out;
}

namespace {

std::vector<double> linear_ref(const std::vector<double>& x, const Tensor& w, const Tensor& bias) {
    const int in = w.rows(), out_n = w.cols();
    std::vector<double> y(static_cast<size_t>(out_n));
    for (int j = 0; j < out_n; ++j) {
        double acc = bias.defined() ? bias.data()[j] : 0.0;
        for (int i = 0; i < in; ++i) acc += x[static_cast<size_t>(i)] * w.at(i, j);
        y[static_cast<size_t>(j)] = acc;
    }
    return y;
}

std::vector<double> layer_norm_row_ref(const std::vector<double>& x, const Tensor& gamma,
                                       const Tensor& beta, double eps) {
    const size_t n = x.size();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    double inv = 1.0 / std::sqrt(var + eps);
    std::vector<double> y(n);
    for (size_t i = 0; i < n; ++i) {
        y[i] = gamma.data()[i] * ((x[i] - mean) * inv) + beta.data()[i];
    }
    return y;
}

double gelu_tanh_ref(double x) {
    double u = std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

std::vector<double> row_of(const Tensor& t, int i) {
    std::vector<double> out(static_cast<size_t>(t.cols()));
    for (int j = 0; j < t.cols(); ++j) out[static_cast<size_t>(j)] = t.at(i, j);
    return out;
}

} // namespace

Tensor mhsa_ref(const Tensor& tokens, const BlockParams& block, const BackboneConfig& config) {
    const int t = tokens.rows();
    const int d = config.d;
    const int heads = config.n_heads;
    const int hd = config.head_dim();
    // projections
    std::vector<std::vector<double>> q(static_cast<size_t>(t)), k(static_cast<size_t>(t)),
        v(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) {
        auto x = row_of(tokens, i);
        q[static_cast<size_t>(i)] = linear_ref(x, block.wq, block.bq);
        k[static_cast<size_t>(i)] = linear_ref(x, block.wk, block.bk);
        v[static_cast<size_t>(i)] = linear_ref(x, block.wv, block.bv);
    }
    Tensor mixed({t, d});
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int h = 0; h < heads; ++h) {
        const int off = h * hd;
        for (int i = 0; i < t; ++i) {
            std::vector<double> scores(static_cast<size_t>(t));
            for (int j = 0; j < t; ++j) {
                double dot = 0.0;
                for (int e = 0; e < hd; ++e) {
                    dot += q[static_cast<size_t>(i)][static_cast<size_t>(off + e)] *
                           k[static_cast<size_t>(j)][static_cast<size_t>(off + e)];
                }
                scores[static_cast<size_t>(j)] = dot * scale;
            }
            double mx = scores[0];
            for (double s : scores) mx = std::max(mx, s);
            double sum = 0.0;
            for (auto& s : scores) {
                s = std::exp(s - mx);
                sum += s;
            }
            for (auto& s : scores) s /= sum;
            for (int e = 0; e < hd; ++e) {
                double acc = 0.0;
                for (int j = 0; j < t; ++j) {
                    acc += scores[static_cast<size_t>(j)] *
                           v[static_cast<size_t>(j)][static_cast<size_t>(off + e)];
                }
                mixed.at(i, off + e) = acc;
            }
        }
    }
    Tensor out({t, d});
    for (int i = 0; i < t; ++i) {
        auto y = linear_ref(row_of(mixed, i), block.wo, block.bo);
        for (int j = 0; j < d; ++j) out.at(i, j) = y[static_cast<size_t>(j)];
    }
    return out;
}

Tensor block_forward_ref(const Tensor& tokens, const BlockParams& block,
                         const BackboneConfig& config) {
    const int t = tokens.rows();
    const int d = config.d;
    Tensor mid({t, d});
    if (config.pre_norm) {
        Tensor normed({t, d});
        for (int i = 0; i < t; ++i) {
            auto y = layer_norm_row_ref(row_of(tokens, i), block.ln1_g, block.ln1_b, kLayerNormEps);
            for (int j = 0; j < d; ++j) normed.at(i, j) = y[static_cast<size_t>(j)];
        }
        Tensor attended = mhsa_ref(normed, block, config);
        for (int i = 0; i < t; ++i) {
            for (int j = 0; j < d; ++j) mid.at(i, j) = tokens.at(i, j) + attended.at(i, j);
        }
    } else {
        Tensor attended = mhsa_ref(tokens, block, config);
        for (int i = 0; i < t; ++i) {
            for (int j = 0; j < d; ++j) mid.at(i, j) = tokens.at(i, j) + attended.at(i, j);
        }
    }
    Tensor out({t, d});
    for (int i = 0; i < t; ++i) {
        auto x = layer_norm_row_ref(row_of(mid, i), block.ln2_g, block.ln2_b, kLayerNormEps);
        auto hidden = linear_ref(x, block.mlp_w1, block.mlp_b1);
        for (auto& h : hidden) h = gelu_tanh_ref(h);
        auto y = linear_ref(hidden, block.mlp_w2, block.mlp_b2);
        for (int j = 0; j < d; ++j) out.at(i, j) = mid.at(i, j) + y[static_cast<size_t>(j)];
    }
    return out;
}

Tensor point_embed_ref(const Tensor& group_rows, int group_size, const PointEmbedParams& params) {
    const int total = group_rows.rows();
    const int g = total / group_size;
    const int h1 = params.s1_w1.cols();
    const int h2 = params.s2_w2.cols();
    const int d = params.proj_w.cols();

    std::vector<std::vector<double>> stage1(static_cast<size_t>(total));
    for (int r = 0; r < total; ++r) {
        auto x = linear_ref(row_of(group_rows, r), params.s1_w1, params.s1_b1);
        for (auto& v : x) v = gelu_tanh_ref(v);
        x = linear_ref(x, params.s1_w2, params.s1_b2);
        for (auto& v : x) v = gelu_tanh_ref(v);
        stage1[static_cast<size_t>(r)] = std::move(x);
    }
    Tensor out({g, d});
    for (int b = 0; b < g; ++b) {
        std::vector<double> pooled(static_cast<size_t>(h1), -std::numeric_limits<double>::infinity());
        for (int r = 0; r < group_size; ++r) {
            const auto& x = stage1[static_cast<size_t>(b * group_size + r)];
            for (int j = 0; j < h1; ++j) {
                pooled[static_cast<size_t>(j)] = std::max(pooled[static_cast<size_t>(j)], x[static_cast<size_t>(j)]);
            }
        }
        std::vector<double> pooled2(static_cast<size_t>(h2), -std::numeric_limits<double>::infinity());
        for (int r = 0; r < group_size; ++r) {
            std::vector<double> joined = stage1[static_cast<size_t>(b * group_size + r)];
            joined.insert(joined.end(), pooled.begin(), pooled.end());
            auto x = linear_ref(joined, params.s2_w1, params.s2_b1);
            for (auto& v : x) v = gelu_tanh_ref(v);
            x = linear_ref(x, params.s2_w2, params.s2_b2);
            for (auto& v : x) v = gelu_tanh_ref(v);
            for (int j = 0; j < h2; ++j) {
                pooled2[static_cast<size_t>(j)] = std::max(pooled2[static_cast<size_t>(j)], x[static_cast<size_t>(j)]);
            }
        }
        auto y = linear_ref(pooled2, params.proj_w, params.proj_b);
        for (int j = 0; j < d; ++j) out.at(b, j) = y[static_cast<size_t>(j)];
    }
    return out;
}

std::vector<int> fps_ref(const PointCloud& cloud, int n_s, int start_index) {
    const int n = cloud.n_points();
    const double* p = cloud.coords.data();
    std::vector<int> picked = {start_index};
    while (static_cast<int>(picked.size()) < n_s) {
        int best = -1;
        double best_d = -1.0;
        for (int i = 0; i < n; ++i) {
            // recompute the distance to the chosen set from scratch
            double dmin = std::numeric_limits<double>::infinity();
            for (int c : picked) {
                double dx = p[i * 3] - p[c * 3];
                double dy = p[i * 3 + 1] - p[c * 3 + 1];
                double dz = p[i * 3 + 2] - p[c * 3 + 2];
                dmin = std::min(dmin, dx * dx + dy * dy + dz * dz);
            }
            if (dmin > best_d) {
                best_d = dmin;
                best = i;
            }
        }
        picked.push_back(best);
    }
    return picked;
}

std::vector<std::vector<int>> knn_ref(const PointCloud& cloud, const std::vector<int>& centroids,
                                      int k) {
    const int n = cloud.n_points();
    const double* p = cloud.coords.data();
    std::vector<std::vector<int>> out;
    for (int c : centroids) {
        std::vector<std::pair<double, int>> dist;
        for (int i = 0; i < n; ++i) {
            double dx = p[i * 3] - p[c * 3];
            double dy = p[i * 3 + 1] - p[c * 3 + 1];
            double dz = p[i * 3 + 2] - p[c * 3 + 2];
            dist.emplace_back(dx * dx + dy * dy + dz * dz, i);
        }
        std::sort(dist.begin(), dist.end());
        std::vector<int> nbrs;
        for (int j = 0; j < k; ++j) nbrs.push_back(dist[static_cast<size_t>(j)].second);
        out.push_back(std::move(nbrs));
    }
    return out;
}

} // namespace appt
