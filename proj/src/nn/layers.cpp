#include "lungquant/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace lungquant::nn {

namespace {

// Accumulates a same-padded 3x3x3 convolution of one input channel into one
// output channel. wk holds the 27 kernel taps, [kz][ky][kx].
void conv3_same_accum(float* oc, const float* icn, const float* wk, int nz, int ny, int nx) {
    for (int kz = 0; kz < 3; ++kz) {
        const int zoff = kz - 1;
        const int oz0 = std::max(0, -zoff);
        const int oz1 = nz - std::max(0, zoff);
        for (int ky = 0; ky < 3; ++ky) {
            const int yoff = ky - 1;
            const int oy0 = std::max(0, -yoff);
            const int oy1 = ny - std::max(0, yoff);
            const float w0 = wk[(kz * 3 + ky) * 3 + 0];
            const float w1 = wk[(kz * 3 + ky) * 3 + 1];
            const float w2 = wk[(kz * 3 + ky) * 3 + 2];
            for (int oz = oz0; oz < oz1; ++oz) {
                const std::size_t izb = static_cast<std::size_t>(oz + zoff) * ny;
                const std::size_t ozb = static_cast<std::size_t>(oz) * ny;
                for (int oy = oy0; oy < oy1; ++oy) {
                    const float* ir = icn + (izb + oy + yoff) * nx;
                    float* orow = oc + (ozb + oy) * nx;
                    if (nx == 1) {
                        orow[0] += w1 * ir[0];
                        continue;
                    }
                    orow[0] += w1 * ir[0] + w2 * ir[1];
                    for (int ox = 1; ox < nx - 1; ++ox)
                        orow[ox] += w0 * ir[ox - 1] + w1 * ir[ox] + w2 * ir[ox + 1];
                    orow[nx - 1] += w0 * ir[nx - 2] + w1 * ir[nx - 1];
                }
            }
        }
    }
}

void fill_channel(float* p, std::size_t n, float v) { std::fill(p, p + n, v); }

} // namespace

// ---------------------------------------------------------------------------
// Conv3d

Conv3d::Conv3d(int cin, int cout, int k, int stride) : cin_(cin), cout_(cout), k_(k), stride_(stride) {
    const bool ok = (k == 3 && stride == 1) || (k == 2 && stride == 2) || (k == 1 && stride == 1);
    if (!ok) throw Error("Conv3d: unsupported kernel/stride combination");
    const std::size_t nw = static_cast<std::size_t>(cout) * cin * k * k * k;
    w.assign(nw, 0.0f);
    b.assign(cout, 0.0f);
    gw.assign(nw, 0.0f);
    gb.assign(cout, 0.0f);
}

void Conv3d::init_he(Rng& rng) {
    const double stddev = std::sqrt(2.0 / (static_cast<double>(cin_) * k_ * k_ * k_));
    for (auto& wi : w) wi = static_cast<float>(rng.normal(0.0, stddev));
    std::fill(b.begin(), b.end(), 0.0f);
}

Tensor Conv3d::forward(const Tensor& in, bool retain) {
    if (in.c != cin_) throw Error("Conv3d: channel mismatch");
    Tensor out;
    const std::size_t ktaps = static_cast<std::size_t>(k_) * k_ * k_;

    if (k_ == 3) {
        out = Tensor(cout_, in.z, in.y, in.x);
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cout_; ++co) {
            float* oc = out.chan(co);
            fill_channel(oc, out.spatial(), b[co]);
            for (int ci = 0; ci < cin_; ++ci)
                conv3_same_accum(oc, in.chan(ci), &w[(static_cast<std::size_t>(co) * cin_ + ci) * 27],
                                 in.z, in.y, in.x);
        }
    } else if (k_ == 2) {
        if (in.z % 2 || in.y % 2 || in.x % 2)
            throw Error("Conv3d stride 2: spatial dims must be even, got " + in.shape_str());
        out = Tensor(cout_, in.z / 2, in.y / 2, in.x / 2);
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cout_; ++co) {
            float* oc = out.chan(co);
            fill_channel(oc, out.spatial(), b[co]);
            for (int ci = 0; ci < cin_; ++ci) {
                const float* icn = in.chan(ci);
                const float* wk = &w[(static_cast<std::size_t>(co) * cin_ + ci) * 8];
                for (int kz = 0; kz < 2; ++kz)
                    for (int ky = 0; ky < 2; ++ky)
                        for (int kx = 0; kx < 2; ++kx) {
                            const float wv = wk[(kz * 2 + ky) * 2 + kx];
                            for (int oz = 0; oz < out.z; ++oz) {
                                const std::size_t izb = static_cast<std::size_t>(2 * oz + kz) * in.y;
                                const std::size_t ozb = static_cast<std::size_t>(oz) * out.y;
                                for (int oy = 0; oy < out.y; ++oy) {
                                    const float* ir = icn + (izb + 2 * oy + ky) * in.x + kx;
                                    float* orow = oc + (ozb + oy) * out.x;
                                    for (int ox = 0; ox < out.x; ++ox) orow[ox] += wv * ir[2 * ox];
                                }
                            }
                        }
            }
        }
    } else { // k == 1
        out = Tensor(cout_, in.z, in.y, in.x);
        const std::size_t ns = in.spatial();
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cout_; ++co) {
            float* oc = out.chan(co);
            fill_channel(oc, ns, b[co]);
            for (int ci = 0; ci < cin_; ++ci) {
                const float wv = w[static_cast<std::size_t>(co) * cin_ + ci];
                const float* ic = in.chan(ci);
                for (std::size_t i = 0; i < ns; ++i) oc[i] += wv * ic[i];
            }
        }
        (void)ktaps;
    }

    if (retain) cached_in_ = in;
    return out;
}

Tensor Conv3d::backward(const Tensor& gout) {
    const Tensor& in = cached_in_;
    if (in.size() == 0) throw Error("Conv3d::backward without retained forward");
    Tensor gin(cin_, in.z, in.y, in.x);

    if (k_ == 3) {
        // input gradient: same-padded conv of gout with the flipped kernel
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < cin_; ++ci) {
            float* gc = gin.chan(ci);
            float wf[27];
            for (int co = 0; co < cout_; ++co) {
                const float* wk = &w[(static_cast<std::size_t>(co) * cin_ + ci) * 27];
                for (int t = 0; t < 27; ++t) wf[t] = wk[26 - t];
                conv3_same_accum(gc, gout.chan(co), wf, gout.z, gout.y, gout.x);
            }
        }
        // weight gradient: correlations between gout and shifted input rows
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cout_; ++co) {
            const float* gcn = gout.chan(co);
            double bsum = 0.0;
            for (std::size_t i = 0; i < gout.spatial(); ++i) bsum += gcn[i];
            gb[co] += static_cast<float>(bsum);
            for (int ci = 0; ci < cin_; ++ci) {
                const float* icn = in.chan(ci);
                float* gwk = &gw[(static_cast<std::size_t>(co) * cin_ + ci) * 27];
                for (int kz = 0; kz < 3; ++kz) {
                    const int zoff = kz - 1;
                    const int oz0 = std::max(0, -zoff);
                    const int oz1 = in.z - std::max(0, zoff);
                    for (int ky = 0; ky < 3; ++ky) {
                        const int yoff = ky - 1;
                        const int oy0 = std::max(0, -yoff);
                        const int oy1 = in.y - std::max(0, yoff);
                        double s0 = 0.0, s1 = 0.0, s2 = 0.0;
                        for (int oz = oz0; oz < oz1; ++oz) {
                            const std::size_t izb = static_cast<std::size_t>(oz + zoff) * in.y;
                            const std::size_t ozb = static_cast<std::size_t>(oz) * in.y;
                            for (int oy = oy0; oy < oy1; ++oy) {
                                const float* ir = icn + (izb + oy + yoff) * in.x;
                                const float* gr = gcn + (ozb + oy) * in.x;
                                double a0 = 0.0, a1 = 0.0, a2 = 0.0;
                                for (int ox = 1; ox < in.x; ++ox) a0 += gr[ox] * ir[ox - 1];
                                for (int ox = 0; ox < in.x; ++ox) a1 += gr[ox] * ir[ox];
                                for (int ox = 0; ox < in.x - 1; ++ox) a2 += gr[ox] * ir[ox + 1];
                                s0 += a0;
                                s1 += a1;
                                s2 += a2;
                            }
                        }
                        gwk[(kz * 3 + ky) * 3 + 0] += static_cast<float>(s0);
                        gwk[(kz * 3 + ky) * 3 + 1] += static_cast<float>(s1);
                        gwk[(kz * 3 + ky) * 3 + 2] += static_cast<float>(s2);
                    }
                }
            }
        }
    } else if (k_ == 2) {
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < cin_; ++ci) {
            float* gc = gin.chan(ci);
            for (int co = 0; co < cout_; ++co) {
                const float* gcn = gout.chan(co);
                const float* wk = &w[(static_cast<std::size_t>(co) * cin_ + ci) * 8];
                for (int kz = 0; kz < 2; ++kz)
                    for (int ky = 0; ky < 2; ++ky)
                        for (int kx = 0; kx < 2; ++kx) {
                            const float wv = wk[(kz * 2 + ky) * 2 + kx];
                            for (int oz = 0; oz < gout.z; ++oz) {
                                const std::size_t izb = static_cast<std::size_t>(2 * oz + kz) * in.y;
                                const std::size_t ozb = static_cast<std::size_t>(oz) * gout.y;
                                for (int oy = 0; oy < gout.y; ++oy) {
                                    float* grow = gc + (izb + 2 * oy + ky) * in.x + kx;
                                    const float* gr = gcn + (ozb + oy) * gout.x;
                                    for (int ox = 0; ox < gout.x; ++ox) grow[2 * ox] += wv * gr[ox];
                                }
                            }
                        }
            }
        }
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cout_; ++co) {
            const float* gcn = gout.chan(co);
            double bsum = 0.0;
            for (std::size_t i = 0; i < gout.spatial(); ++i) bsum += gcn[i];
            gb[co] += static_cast<float>(bsum);
            for (int ci = 0; ci < cin_; ++ci) {
                const float* icn = in.chan(ci);
                float* gwk = &gw[(static_cast<std::size_t>(co) * cin_ + ci) * 8];
                for (int kz = 0; kz < 2; ++kz)
                    for (int ky = 0; ky < 2; ++ky)
                        for (int kx = 0; kx < 2; ++kx) {
                            double s = 0.0;
                            for (int oz = 0; oz < gout.z; ++oz) {
                                const std::size_t izb = static_cast<std::size_t>(2 * oz + kz) * in.y;
                                const std::size_t ozb = static_cast<std::size_t>(oz) * gout.y;
                                for (int oy = 0; oy < gout.y; ++oy) {
                                    const float* ir = icn + (izb + 2 * oy + ky) * in.x + kx;
                                    const float* gr = gcn + (ozb + oy) * gout.x;
                                    for (int ox = 0; ox < gout.x; ++ox) s += gr[ox] * ir[2 * ox];
                                }
                            }
                            gwk[(kz * 2 + ky) * 2 + kx] += static_cast<float>(s);
                        }
            }
        }
    } else { // k == 1
        const std::size_t ns = in.spatial();
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < cin_; ++ci) {
            float* gc = gin.chan(ci);
            for (int co = 0; co < cout_; ++co) {
                const float wv = w[static_cast<std::size_t>(co) * cin_ + ci];
                const float* gcn = gout.chan(co);
                for (std::size_t i = 0; i < ns; ++i) gc[i] += wv * gcn[i];
            }
        }
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cout_; ++co) {
            const float* gcn = gout.chan(co);
            double bsum = 0.0;
            for (std::size_t i = 0; i < ns; ++i) bsum += gcn[i];
            gb[co] += static_cast<float>(bsum);
            for (int ci = 0; ci < cin_; ++ci) {
                const float* icn = in.chan(ci);
                double s = 0.0;
                for (std::size_t i = 0; i < ns; ++i) s += gcn[i] * icn[i];
                gw[static_cast<std::size_t>(co) * cin_ + ci] += static_cast<float>(s);
            }
        }
    }

    cached_in_.release();
    return gin;
}

void Conv3d::zero_grad() {
    std::fill(gw.begin(), gw.end(), 0.0f);
    std::fill(gb.begin(), gb.end(), 0.0f);
}

void Conv3d::collect_params(const std::string& prefix, std::vector<ParamView>& out) {
    out.push_back({prefix + ".w", w.data(), gw.data(), w.size()});
    out.push_back({prefix + ".b", b.data(), gb.data(), b.size()});
}

// ---------------------------------------------------------------------------
// ConvTranspose3d (k=2, s=2)

ConvTranspose3d::ConvTranspose3d(int cin, int cout) : cin_(cin), cout_(cout) {
    const std::size_t nw = static_cast<std::size_t>(cin) * cout * 8;
    w.assign(nw, 0.0f);
    b.assign(cout, 0.0f);
    gw.assign(nw, 0.0f);
    gb.assign(cout, 0.0f);
}

void ConvTranspose3d::init_he(Rng& rng) {
    const double stddev = std::sqrt(2.0 / (static_cast<double>(cin_) * 8.0));
    for (auto& wi : w) wi = static_cast<float>(rng.normal(0.0, stddev));
    std::fill(b.begin(), b.end(), 0.0f);
}

Tensor ConvTranspose3d::forward(const Tensor& in, bool retain) {
    if (in.c != cin_) throw Error("ConvTranspose3d: channel mismatch");
    Tensor out(cout_, in.z * 2, in.y * 2, in.x * 2);
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout_; ++co) {
        float* oc = out.chan(co);
        fill_channel(oc, out.spatial(), b[co]);
        for (int ci = 0; ci < cin_; ++ci) {
            const float* icn = in.chan(ci);
            const float* wk = &w[(static_cast<std::size_t>(ci) * cout_ + co) * 8];
            for (int kz = 0; kz < 2; ++kz)
                for (int ky = 0; ky < 2; ++ky)
                    for (int kx = 0; kx < 2; ++kx) {
                        const float wv = wk[(kz * 2 + ky) * 2 + kx];
                        for (int iz = 0; iz < in.z; ++iz) {
                            const std::size_t ozb = static_cast<std::size_t>(2 * iz + kz) * out.y;
                            const std::size_t izb = static_cast<std::size_t>(iz) * in.y;
                            for (int iy = 0; iy < in.y; ++iy) {
                                float* orow = oc + (ozb + 2 * iy + ky) * out.x + kx;
                                const float* ir = icn + (izb + iy) * in.x;
                                for (int ix = 0; ix < in.x; ++ix) orow[2 * ix] += wv * ir[ix];
                            }
                        }
                    }
        }
    }
    if (retain) cached_in_ = in;
    return out;
}

Tensor ConvTranspose3d::backward(const Tensor& gout) {
    const Tensor& in = cached_in_;
    if (in.size() == 0) throw Error("ConvTranspose3d::backward without retained forward");
    Tensor gin(cin_, in.z, in.y, in.x);
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < cin_; ++ci) {
        float* gc = gin.chan(ci);
        for (int co = 0; co < cout_; ++co) {
            const float* gcn = gout.chan(co);
            const float* wk = &w[(static_cast<std::size_t>(ci) * cout_ + co) * 8];
            for (int kz = 0; kz < 2; ++kz)
                for (int ky = 0; ky < 2; ++ky)
                    for (int kx = 0; kx < 2; ++kx) {
                        const float wv = wk[(kz * 2 + ky) * 2 + kx];
                        for (int iz = 0; iz < in.z; ++iz) {
                            const std::size_t ozb = static_cast<std::size_t>(2 * iz + kz) * gout.y;
                            const std::size_t izb = static_cast<std::size_t>(iz) * in.y;
                            for (int iy = 0; iy < in.y; ++iy) {
                                const float* gr = gcn + (ozb + 2 * iy + ky) * gout.x + kx;
                                float* grow = gc + (izb + iy) * in.x;
                                for (int ix = 0; ix < in.x; ++ix) grow[ix] += wv * gr[2 * ix];
                            }
                        }
                    }
        }
    }
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < cin_; ++ci) {
        const float* icn = in.chan(ci);
        for (int co = 0; co < cout_; ++co) {
            const float* gcn = gout.chan(co);
            float* gwk = &gw[(static_cast<std::size_t>(ci) * cout_ + co) * 8];
            for (int kz = 0; kz < 2; ++kz)
                for (int ky = 0; ky < 2; ++ky)
                    for (int kx = 0; kx < 2; ++kx) {
                        double s = 0.0;
                        for (int iz = 0; iz < in.z; ++iz) {
                            const std::size_t ozb = static_cast<std::size_t>(2 * iz + kz) * gout.y;
                            const std::size_t izb = static_cast<std::size_t>(iz) * in.y;
                            for (int iy = 0; iy < in.y; ++iy) {
                                const float* gr = gcn + (ozb + 2 * iy + ky) * gout.x + kx;
                                const float* ir = icn + (izb + iy) * in.x;
                                for (int ix = 0; ix < in.x; ++ix) s += gr[2 * ix] * ir[ix];
                            }
                        }
                        gwk[(kz * 2 + ky) * 2 + kx] += static_cast<float>(s);
                    }
        }
    }
    for (int co = 0; co < cout_; ++co) {
        const float* gcn = gout.chan(co);
        double bsum = 0.0;
        for (std::size_t i = 0; i < gout.spatial(); ++i) bsum += gcn[i];
        gb[co] += static_cast<float>(bsum);
    }
    cached_in_.release();
    return gin;
}

void ConvTranspose3d::zero_grad() {
    std::fill(gw.begin(), gw.end(), 0.0f);
    std::fill(gb.begin(), gb.end(), 0.0f);
}

void ConvTranspose3d::collect_params(const std::string& prefix, std::vector<ParamView>& out) {
    out.push_back({prefix + ".w", w.data(), gw.data(), w.size()});
    out.push_back({prefix + ".b", b.data(), gb.data(), b.size()});
}

// ---------------------------------------------------------------------------
// InstanceNorm3d

InstanceNorm3d::InstanceNorm3d(int channels) : channels_(channels) {
    gamma.assign(channels, 1.0f);
    beta.assign(channels, 0.0f);
    ggamma.assign(channels, 0.0f);
    gbeta.assign(channels, 0.0f);
}

Tensor InstanceNorm3d::forward(const Tensor& in, bool retain) {
    if (in.c != channels_) throw Error("InstanceNorm3d: channel mismatch");
    Tensor out(in.c, in.z, in.y, in.x);
    Tensor xhat;
    if (retain) {
        xhat = Tensor(in.c, in.z, in.y, in.x);
        cached_invstd_.assign(channels_, 0.0f);
    }
    const std::size_t ns = in.spatial();
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < channels_; ++ci) {
        const float* ic = in.chan(ci);
        float* oc = out.chan(ci);
        double sum = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < ns; ++i) {
            sum += ic[i];
            sq += static_cast<double>(ic[i]) * ic[i];
        }
        const double mean = sum / ns;
        const double var = std::max(0.0, sq / ns - mean * mean);
        const float invstd = static_cast<float>(1.0 / std::sqrt(var + kEps));
        const float mu = static_cast<float>(mean);
        const float g = gamma[ci], be = beta[ci];
        if (retain) {
            float* xc = xhat.chan(ci);
            for (std::size_t i = 0; i < ns; ++i) {
                const float xh = (ic[i] - mu) * invstd;
                xc[i] = xh;
                oc[i] = g * xh + be;
            }
            cached_invstd_[ci] = invstd;
        } else {
            for (std::size_t i = 0; i < ns; ++i) oc[i] = g * (ic[i] - mu) * invstd + be;
        }
    }
    if (retain) cached_xhat_ = std::move(xhat);
    return out;
}

Tensor InstanceNorm3d::backward(const Tensor& gout) {
    const Tensor& xhat = cached_xhat_;
    if (xhat.size() == 0) throw Error("InstanceNorm3d::backward without retained forward");
    Tensor gin(gout.c, gout.z, gout.y, gout.x);
    const std::size_t ns = gout.spatial();
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < channels_; ++ci) {
        const float* gc = gout.chan(ci);
        const float* xc = xhat.chan(ci);
        float* oc = gin.chan(ci);
        double sg = 0.0, sgx = 0.0;
        for (std::size_t i = 0; i < ns; ++i) {
            sg += gc[i];
            sgx += static_cast<double>(gc[i]) * xc[i];
        }
        gbeta[ci] += static_cast<float>(sg);
        ggamma[ci] += static_cast<float>(sgx);
        const float g = gamma[ci];
        const float invstd = cached_invstd_[ci];
        const float mean_g = static_cast<float>(sg / ns);
        const float mean_gx = static_cast<float>(sgx / ns);
        const float a = g * invstd;
        for (std::size_t i = 0; i < ns; ++i)
            oc[i] = a * (gc[i] - mean_g - xc[i] * mean_gx);
    }
    cached_xhat_.release();
    cached_invstd_.clear();
    return gin;
}

void InstanceNorm3d::zero_grad() {
    std::fill(ggamma.begin(), ggamma.end(), 0.0f);
    std::fill(gbeta.begin(), gbeta.end(), 0.0f);
}

void InstanceNorm3d::collect_params(const std::string& prefix, std::vector<ParamView>& out) {
    out.push_back({prefix + ".gamma", gamma.data(), ggamma.data(), gamma.size()});
    out.push_back({prefix + ".beta", beta.data(), gbeta.data(), beta.size()});
}

// ---------------------------------------------------------------------------
// ReLU

Tensor ReLU::forward(const Tensor& in, bool retain) {
    Tensor out(in.c, in.z, in.y, in.x);
    for (std::size_t i = 0; i < in.size(); ++i) out.v[i] = in.v[i] > 0.0f ? in.v[i] : 0.0f;
    if (retain) cached_out_ = out;
    return out;
}

Tensor ReLU::backward(const Tensor& gout) {
    if (cached_out_.size() == 0) throw Error("ReLU::backward without retained forward");
    Tensor gin(gout.c, gout.z, gout.y, gout.x);
    for (std::size_t i = 0; i < gout.size(); ++i)
        gin.v[i] = cached_out_.v[i] > 0.0f ? gout.v[i] : 0.0f;
    cached_out_.release();
    return gin;
}

// ---------------------------------------------------------------------------
// softmax / concat / pad helpers

Tensor softmax_channels(const Tensor& logits) {
    Tensor out(logits.c, logits.z, logits.y, logits.x);
    const std::size_t ns = logits.spatial();
    const int nc = logits.c;
    for (std::size_t i = 0; i < ns; ++i) {
        float m = logits.v[i];
        for (int c = 1; c < nc; ++c) m = std::max(m, logits.v[c * ns + i]);
        float denom = 0.0f;
        for (int c = 0; c < nc; ++c) {
            const float e = std::exp(logits.v[c * ns + i] - m);
            out.v[c * ns + i] = e;
            denom += e;
        }
        const float inv = 1.0f / denom;
        for (int c = 0; c < nc; ++c) out.v[c * ns + i] *= inv;
    }
    return out;
}

Tensor softmax_backward(const Tensor& probs, const Tensor& gprobs) {
    Tensor gin(probs.c, probs.z, probs.y, probs.x);
    const std::size_t ns = probs.spatial();
    const int nc = probs.c;
    for (std::size_t i = 0; i < ns; ++i) {
        float dot = 0.0f;
        for (int c = 0; c < nc; ++c) dot += probs.v[c * ns + i] * gprobs.v[c * ns + i];
        for (int c = 0; c < nc; ++c)
            gin.v[c * ns + i] = probs.v[c * ns + i] * (gprobs.v[c * ns + i] - dot);
    }
    return gin;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.z != b.z || a.y != b.y || a.x != b.x)
        throw Error("concat_channels: spatial shape mismatch");
    Tensor out(a.c + b.c, a.z, a.y, a.x);
    std::memcpy(out.v.data(), a.v.data(), a.size() * sizeof(float));
    std::memcpy(out.v.data() + a.size(), b.v.data(), b.size() * sizeof(float));
    return out;
}

void split_channels(const Tensor& g, int ca, Tensor& ga, Tensor& gb) {
    ga = Tensor(ca, g.z, g.y, g.x);
    gb = Tensor(g.c - ca, g.z, g.y, g.x);
    std::memcpy(ga.v.data(), g.v.data(), ga.size() * sizeof(float));
    std::memcpy(gb.v.data(), g.v.data() + ga.size(), gb.size() * sizeof(float));
}

Tensor pad_spatial(const Tensor& in, const int lo[3], const int hi[3]) {
    Tensor out(in.c, in.z + lo[0] + hi[0], in.y + lo[1] + hi[1], in.x + lo[2] + hi[2]);
    for (int ci = 0; ci < in.c; ++ci) {
        const float* ic = in.chan(ci);
        float* oc = out.chan(ci);
        for (int z = 0; z < in.z; ++z)
            for (int y = 0; y < in.y; ++y)
                std::memcpy(oc + (static_cast<std::size_t>(z + lo[0]) * out.y + (y + lo[1])) * out.x +
                                lo[2],
                            ic + (static_cast<std::size_t>(z) * in.y + y) * in.x,
                            static_cast<std::size_t>(in.x) * sizeof(float));
    }
    return out;
}

Tensor crop_spatial(const Tensor& in, const int lo[3], const int out_dims[3]) {
    Tensor out(in.c, out_dims[0], out_dims[1], out_dims[2]);
    for (int ci = 0; ci < in.c; ++ci) {
        const float* ic = in.chan(ci);
        float* oc = out.chan(ci);
        for (int z = 0; z < out.z; ++z)
            for (int y = 0; y < out.y; ++y)
                std::memcpy(oc + (static_cast<std::size_t>(z) * out.y + y) * out.x,
                            ic + (static_cast<std::size_t>(z + lo[0]) * in.y + (y + lo[1])) * in.x +
                                lo[2],
                            static_cast<std::size_t>(out.x) * sizeof(float));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Adam

void Adam::step(const std::vector<ParamView>& params) {
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.n, 0.0f);
            v_.emplace_back(p.n, 0.0f);
        }
    }
    if (m_.size() != params.size()) throw Error("Adam: parameter list changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const double alpha = lr_ * std::sqrt(bc2) / bc1;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const auto& p = params[pi];
        float* m = m_[pi].data();
        float* v = v_[pi].data();
        for (std::size_t i = 0; i < p.n; ++i) {
            const float g = p.grad[i];
            m[i] = static_cast<float>(beta1_ * m[i] + (1.0 - beta1_) * g);
            v[i] = static_cast<float>(beta2_ * v[i] + (1.0 - beta2_) * g * g);
            p.value[i] -= static_cast<float>(alpha * m[i] / (std::sqrt(static_cast<double>(v[i])) + eps_));
        }
    }
}

} // namespace lungquant::nn
