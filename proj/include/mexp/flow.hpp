#pragma once

#include <algorithm>
#include <ostream>
#include <vector>

#include "mexp/numgrid/grid.hpp"

namespace mexp {

/// Dense motion between two frames, in pixels per frame. `u` is the
/// horizontal (column) component, `v` the vertical (row) component.
struct FlowField {
    Grid u;
    Grid v;

    int height() const { return u.extent(0); }
    int width() const { return u.extent(1); }
};

struct FlowOptions {
    double smoothness = 1.0;  // alpha, on a 0..255 luminance scale
    int iterations = 200;
};

namespace detail {

inline int reflect(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

/// (R+G+B)/3 rescaled to 0..255, the range alpha is calibrated for.
inline std::vector<double> luminance255(const Grid& frame) {
    const int h = frame.extent(1), w = frame.extent(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> out(plane);
    const float* p = frame.data();
    for (std::size_t i = 0; i < plane; ++i) {
        out[i] = 85.0 * (double(p[i]) + double(p[plane + i]) + double(p[2 * plane + i]));
    }
    return out;
}

}  // namespace detail

/// Horn–Schunck optical flow on luminance with a fixed Jacobi iteration
/// count. Spatial derivatives are five-point central differences of the mean
/// of both frames, the temporal derivative is the frame difference; all
/// stencils use reflective boundaries.
inline FlowField estimate_flow(const Grid& frame_t, const Grid& frame_t1, const FlowOptions& opt = {}) {
    if (frame_t.rank() != 3 || frame_t.extent(0) != 3) {
        throw ShapeError("estimate_flow: frames must be 3xHxW, got " + to_string(frame_t.shape()));
    }
    if (frame_t.shape() != frame_t1.shape()) {
        throw ShapeError("estimate_flow: frame shapes differ " + to_string(frame_t.shape()) + " vs " +
                         to_string(frame_t1.shape()));
    }
    if (opt.iterations < 1 || !(opt.smoothness > 0)) {
        throw ValidationError("estimate_flow: need smoothness > 0 and iterations >= 1");
    }
    const int h = frame_t.extent(1), w = frame_t.extent(2);
    const auto a = detail::luminance255(frame_t);
    const auto b = detail::luminance255(frame_t1);
    const std::size_t n = a.size();
    auto at = [w](const std::vector<double>& img, int r, int c) { return img[static_cast<std::size_t>(r) * w + c]; };

    std::vector<double> ix(n), iy(n), it(n);
    for (int r = 0; r < h; ++r) {
        const int u2 = detail::reflect(r - 2, h), u1 = detail::reflect(r - 1, h);
        const int d1 = detail::reflect(r + 1, h), d2 = detail::reflect(r + 2, h);
        for (int c = 0; c < w; ++c) {
            const int l2 = detail::reflect(c - 2, w), l1 = detail::reflect(c - 1, w);
            const int r1 = detail::reflect(c + 1, w), r2 = detail::reflect(c + 2, w);
            const std::size_t k = static_cast<std::size_t>(r) * w + c;
            auto dx = [&](const std::vector<double>& f) {
                return (at(f, r, l2) - 8 * at(f, r, l1) + 8 * at(f, r, r1) - at(f, r, r2)) / 12.0;
            };
            auto dy = [&](const std::vector<double>& f) {
                return (at(f, u2, c) - 8 * at(f, u1, c) + 8 * at(f, d1, c) - at(f, d2, c)) / 12.0;
            };
            ix[k] = 0.5 * (dx(a) + dx(b));
            iy[k] = 0.5 * (dy(a) + dy(b));
            it[k] = b[k] - a[k];
        }
    }

    const double alpha2 = opt.smoothness * opt.smoothness;
    // gradient components pre-divided by the Horn–Schunck denominator
    std::vector<double> gx(n), gy(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double denom = alpha2 + ix[k] * ix[k] + iy[k] * iy[k];
        gx[k] = ix[k] / denom;
        gy[k] = iy[k] / denom;
    }

    // u and v live in (h+2)×(w+2) buffers whose one-pixel rim mirrors the
    // interior, so the averaging stencil runs without index remapping
    const int pw = w + 2;
    const std::size_t padded = static_cast<std::size_t>(h + 2) * pw;
    std::vector<double> u(padded, 0.0), v(padded, 0.0), ubar(n), vbar(n);
    auto fill_rim = [&](std::vector<double>& f) {
        for (int r = 1; r <= h; ++r) {
            double* row = f.data() + static_cast<std::size_t>(r) * pw;
            row[0] = row[1 + detail::reflect(-1, w)];
            row[w + 1] = row[1 + detail::reflect(w, w)];
        }
        std::copy_n(f.data() + static_cast<std::size_t>(1 + detail::reflect(-1, h)) * pw, pw, f.data());
        std::copy_n(f.data() + static_cast<std::size_t>(1 + detail::reflect(h, h)) * pw, pw,
                    f.data() + static_cast<std::size_t>(h + 1) * pw);
    };
    auto local_mean = [&](const std::vector<double>& f, std::vector<double>& out) {
        for (int r = 0; r < h; ++r) {
            const double* up = f.data() + static_cast<std::size_t>(r) * pw;
            const double* mid = up + pw;
            const double* down = mid + pw;
            double* o = out.data() + static_cast<std::size_t>(r) * w;
            for (int c = 0; c < w; ++c) {
                o[c] = (up[c + 1] + down[c + 1] + mid[c] + mid[c + 2]) / 6.0 +
                       (up[c] + up[c + 2] + down[c] + down[c + 2]) / 12.0;
            }
        }
    };
    for (int iter = 0; iter < opt.iterations; ++iter) {
        fill_rim(u);
        fill_rim(v);
        local_mean(u, ubar);
        local_mean(v, vbar);
        for (int r = 0; r < h; ++r) {
            double* ur = u.data() + static_cast<std::size_t>(r + 1) * pw + 1;
            double* vr = v.data() + static_cast<std::size_t>(r + 1) * pw + 1;
            const std::size_t base = static_cast<std::size_t>(r) * w;
            for (int c = 0; c < w; ++c) {
                const std::size_t k = base + c;
                const double t = ix[k] * ubar[k] + iy[k] * vbar[k] + it[k];
                ur[c] = ubar[k] - gx[k] * t;
                vr[c] = vbar[k] - gy[k] * t;
            }
        }
    }
    std::vector<float> uo(n), vo(n);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const std::size_t k = static_cast<std::size_t>(r + 1) * pw + c + 1;
            uo[static_cast<std::size_t>(r) * w + c] = static_cast<float>(u[k]);
            vo[static_cast<std::size_t>(r) * w + c] = static_cast<float>(v[k]);
        }
    return {Grid({h, w}, std::move(uo)), Grid({h, w}, std::move(vo))};
}

/// Flow as a 2×H×W grid (u plane, then v plane), the temporal encoder input.
inline Grid flow_to_grid(const FlowField& flow) {
    const int h = flow.height(), w = flow.width();
    std::vector<float> out;
    out.reserve(2 * flow.u.size());
    out.insert(out.end(), flow.u.values().begin(), flow.u.values().end());
    out.insert(out.end(), flow.v.values().begin(), flow.v.values().end());
    return Grid({2, h, w}, std::move(out));
}

/// Debug dump: header then one "row,col,u,v" line per pixel.
inline void write_flow_csv(const FlowField& flow, std::ostream& out) {
    out << "row,col,u,v\n";
    const int h = flow.height(), w = flow.width();
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const std::size_t k = static_cast<std::size_t>(r) * w + c;
            out << r << ',' << c << ',' << flow.u[k] << ',' << flow.v[k] << '\n';
        }
}

}  // namespace mexp
