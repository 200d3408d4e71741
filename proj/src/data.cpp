#include "soapkd/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "soapkd/common.hpp"
#include "soapkd/png_io.hpp"
#include "soapkd/rng.hpp"

namespace fs = std::filesystem;

namespace soapkd {

double wrap_degrees(double deg) {
    double d = std::fmod(deg, 180.0);
    if (d < 0) d += 180.0;
    return d;
}

AngleLabel AngleLabel::from_degrees(double deg) {
    if (!std::isfinite(deg)) throw DataError("angle must be finite");
    return AngleLabel{wrap_degrees(deg)};
}

AngleLabel AngleLabel::from_normalized(double norm) {
    return from_degrees(norm * 180.0);
}

double circular_distance_degrees(double a, double b) {
    const double d = std::fabs(wrap_degrees(a) - wrap_degrees(b));
    return std::min(d, 180.0 - d);
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

Tensorf squarify_and_resize(const Tensorf& image, int target) {
    if (image.rank() != 3) throw DataError("squarify: expected {C, H, W} image");
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (c < 1 || h < 1 || w < 1) throw DataError("squarify: non-positive dimensions");
    if (target < 2) throw DataError("squarify: degenerate target size");
    for (std::size_t i = 0; i < image.numel(); ++i)
        if (!std::isfinite(image[i])) throw DataError("squarify: NaN pixel");

    if (h == w && h == target) return image;

    // Pad to square, content centered, extra pixel on bottom/right.
    const int side = std::max(h, w);
    const int top = (side - h) / 2;
    const int left = (side - w) / 2;
    Tensorf padded({c, side, side});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                padded.at3(ch, top + y, left + x) = image.at3(ch, y, x);

    if (side == target) return padded;

    // Bilinear resize with half-pixel centers (identity when sizes match).
    Tensorf out({c, target, target});
    const double scale = double(side) / double(target);
    for (int y = 0; y < target; ++y) {
        const double sy = (y + 0.5) * scale - 0.5;
        const int y0 = std::clamp(int(std::floor(sy)), 0, side - 1);
        const int y1 = std::min(y0 + 1, side - 1);
        const double fy = std::clamp(sy - y0, 0.0, 1.0);
        for (int x = 0; x < target; ++x) {
            const double sx = (x + 0.5) * scale - 0.5;
            const int x0 = std::clamp(int(std::floor(sx)), 0, side - 1);
            const int x1 = std::min(x0 + 1, side - 1);
            const double fx = std::clamp(sx - x0, 0.0, 1.0);
            for (int ch = 0; ch < c; ++ch) {
                const double v00 = padded.at3(ch, y0, x0);
                const double v01 = padded.at3(ch, y0, x1);
                const double v10 = padded.at3(ch, y1, x0);
                const double v11 = padded.at3(ch, y1, x1);
                out.at3(ch, y, x) = float((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                          fy * ((1 - fx) * v10 + fx * v11));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

DatasetSplit split_dataset(const std::vector<ImageSample>& samples,
                           std::uint64_t seed) {
    if (samples.size() < 10)
        throw DataError("split_dataset: need at least 10 samples, got " +
                        std::to_string(samples.size()));
    std::vector<int> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);

    const std::size_t n_train = samples.size() * 8 / 10;
    DatasetSplit split;
    split.seed = seed;
    split.train.reserve(n_train);
    split.val.reserve(samples.size() - n_train);
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i < n_train)
            split.train.push_back(samples[std::size_t(order[i])]);
        else
            split.val.push_back(samples[std::size_t(order[i])]);
    }
    return split;
}

// ---------------------------------------------------------------------------
// Procedural ship generator
// ---------------------------------------------------------------------------

namespace {

// Rounded-rectangle signed distance in the ship frame.
double rounded_rect_sdf(double u, double v, double half_len, double half_wid,
                        double radius) {
    const double qx = std::fabs(u) - (half_len - radius);
    const double qy = std::fabs(v) - (half_wid - radius);
    const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0);
    return std::sqrt(ox * ox + oy * oy) + std::min(std::max(qx, qy), 0.0) - radius;
}

double coverage(double sdf) {
    // ~1px anti-aliasing band
    return std::clamp(0.5 - sdf, 0.0, 1.0);
}

struct Block {
    double u_center, u_half, v_half, delta;
};

}  // namespace

std::vector<ImageSample> synth_generate(int n, int resolution, std::uint64_t seed) {
    if (n < 0) throw DataError("synth_generate: n must be >= 0");
    if (resolution < 16) throw DataError("synth_generate: resolution below 16");

    std::vector<ImageSample> out;
    out.reserve(std::size_t(n));
    Rng base(seed);

    for (int idx = 0; idx < n; ++idx) {
        Rng rng = base.fork(std::uint64_t(idx));
        const double res = resolution;

        const double theta_deg = rng.uniform(0.0, 180.0);
        const double theta = theta_deg * M_PI / 180.0;
        const int ship_class = int(rng.below(kSynthClassCount));
        const bool stern_first = rng.uniform() < 0.5;  // bow/stern ambiguity

        const double half_len = res * rng.uniform(0.26, 0.38);
        const double aspect = rng.uniform(2.5, 4.2);
        const double half_wid = half_len / aspect;
        const double corner = half_wid * rng.uniform(0.4, 0.8);
        const double cx = (res - 1) / 2.0 + rng.uniform(-0.05, 0.05) * res;
        const double cy = (res - 1) / 2.0 + rng.uniform(-0.05, 0.05) * res;

        const double hull_level = rng.uniform(0.65, 0.92);
        const double hull_rgb[3] = {hull_level * rng.uniform(0.92, 1.0),
                                    hull_level * rng.uniform(0.92, 1.0),
                                    hull_level * rng.uniform(0.88, 0.98)};

        // class templates: deck furniture, symmetric across the axis
        std::vector<Block> blocks;
        const double bridge = std::min(0.25, 1.0 - hull_level);
        switch (ship_class) {
            case 0: break;  // bare hull
            case 1: blocks.push_back({0.0, 0.16 * half_len, 0.68 * half_wid, bridge}); break;
            case 2: blocks.push_back({-0.42 * half_len, 0.14 * half_len, 0.68 * half_wid, bridge}); break;
            case 3:
                blocks.push_back({0.40 * half_len, 0.13 * half_len, 0.68 * half_wid, bridge});
                blocks.push_back({0.0, 0.70 * half_len, 0.14 * half_wid, -0.10});
                break;
            case 4:
                blocks.push_back({-0.38 * half_len, 0.12 * half_len, 0.64 * half_wid, bridge});
                blocks.push_back({0.38 * half_len, 0.12 * half_len, 0.64 * half_wid, bridge});
                break;
            default: break;
        }

        // water backdrop: bluish base plus directional ripples
        const double base_rgb[3] = {rng.uniform(0.04, 0.10), rng.uniform(0.08, 0.15),
                                    rng.uniform(0.14, 0.24)};
        const double ripple_amp = rng.uniform(0.015, 0.045);
        const double ripple_len = rng.uniform(4.0, 12.0);
        const double ripple_dir = rng.uniform(0.0, M_PI);
        const double ripple_phase = rng.uniform(0.0, 2.0 * M_PI);
        const double noise_sigma = rng.uniform(0.008, 0.022);

        const double ct = std::cos(theta), st = std::sin(theta);
        Tensorf img({3, resolution, resolution});
        for (int row = 0; row < resolution; ++row) {
            const double y_up = (res - 1) - row - cy;
            for (int col = 0; col < resolution; ++col) {
                const double x = col - cx;
                // ship frame: u along the orientation axis (y-up convention)
                double u = x * ct + y_up * st;
                const double v = -x * st + y_up * ct;
                if (stern_first) u = -u;

                const double ripple =
                    ripple_amp * std::sin(2.0 * M_PI *
                                              (col * std::cos(ripple_dir) +
                                               row * std::sin(ripple_dir)) /
                                              ripple_len +
                                          ripple_phase);

                const double hull_cov =
                    coverage(rounded_rect_sdf(u, v, half_len, half_wid, corner));
                double deck = 0.0;
                for (const Block& blk : blocks) {
                    const double bcov = coverage(rounded_rect_sdf(
                        u - blk.u_center, v, blk.u_half, blk.v_half,
                        0.25 * std::min(blk.u_half, blk.v_half)));
                    deck += blk.delta * bcov;
                }
                for (int c = 0; c < 3; ++c) {
                    const double water = base_rgb[c] + ripple;
                    const double ship = hull_rgb[c] + deck;
                    double value = water * (1.0 - hull_cov) + ship * hull_cov;
                    value += noise_sigma * rng.normal();
                    img.at3(c, row, col) = float(std::clamp(value, 0.0, 1.0));
                }
            }
        }

        ImageSample sample;
        sample.pixels = std::move(img);
        sample.label = AngleLabel::from_degrees(theta_deg);
        sample.ship_class = ship_class;
        out.push_back(std::move(sample));
    }
    return out;
}

double principal_axis_degrees(const Tensorf& image) {
    const int h = image.dim(1), w = image.dim(2);
    // Weight by brightness above the water line so background noise drops out.
    double m00 = 0, mx = 0, my = 0;
    auto weight = [&](int row, int col) {
        const double mean = (image.at3(0, row, col) + image.at3(1, row, col) +
                             image.at3(2, row, col)) /
                            3.0;
        return std::max(0.0, mean - 0.40);
    };
    for (int row = 0; row < h; ++row)
        for (int col = 0; col < w; ++col) {
            const double wgt = weight(row, col);
            m00 += wgt;
            mx += wgt * col;
            my += wgt * (h - 1 - row);  // y-up
        }
    if (m00 <= 0) throw DataError("principal axis: empty image");
    const double cx = mx / m00, cy = my / m00;
    double mu20 = 0, mu02 = 0, mu11 = 0;
    for (int row = 0; row < h; ++row)
        for (int col = 0; col < w; ++col) {
            const double wgt = weight(row, col);
            const double dx = col - cx, dy = (h - 1 - row) - cy;
            mu20 += wgt * dx * dx;
            mu02 += wgt * dy * dy;
            mu11 += wgt * dx * dy;
        }
    const double angle = 0.5 * std::atan2(2.0 * mu11, mu20 - mu02);
    return wrap_degrees(angle * 180.0 / M_PI);
}

// ---------------------------------------------------------------------------
// Manifest I/O
// ---------------------------------------------------------------------------

void write_dataset(const std::string& dir, const std::vector<ImageSample>& samples,
                   const std::string& manifest_name) {
    fs::create_directories(dir);
    std::ostringstream manifest;
    manifest << "path,angle_degrees,class\n";
    char name[32];
    for (std::size_t i = 0; i < samples.size(); ++i) {
        std::snprintf(name, sizeof(name), "img_%06zu.png", i);
        write_png((fs::path(dir) / name).string(), samples[i].pixels);
        char angle[32];
        std::snprintf(angle, sizeof(angle), "%.6f", samples[i].label.degrees);
        manifest << name << "," << angle << "," << samples[i].ship_class << "\n";
    }
    std::ofstream f(fs::path(dir) / manifest_name, std::ios::binary);
    f << manifest.str();
    if (!f) throw DataError("write_dataset: cannot write manifest in " + dir);
}

std::vector<ImageSample> read_dataset(const std::string& dir,
                                      const std::string& manifest_name) {
    std::ifstream f(fs::path(dir) / manifest_name);
    if (!f) throw DataError("read_dataset: missing manifest " +
                            (fs::path(dir) / manifest_name).string());
    std::string line;
    if (!std::getline(f, line) || line != "path,angle_degrees,class")
        throw DataError("read_dataset: bad manifest header in " + dir);

    std::vector<ImageSample> out;
    int line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string path, angle, cls;
        if (!std::getline(is, path, ',') || !std::getline(is, angle, ',') ||
            !std::getline(is, cls))
            throw DataError("read_dataset: malformed manifest line " +
                            std::to_string(line_no));
        ImageSample s;
        s.pixels = read_png((fs::path(dir) / path).string());
        s.label = AngleLabel::from_degrees(std::stod(angle));
        s.ship_class = std::stoi(cls);
        out.push_back(std::move(s));
    }
    return out;
}

Tensorf make_batch(const std::vector<ImageSample>& samples,
                   const std::vector<int>& indices) {
    if (indices.empty()) throw DataError("make_batch: empty index list");
    const Tensorf& first = samples[std::size_t(indices[0])].pixels;
    const int c = first.dim(0), h = first.dim(1), w = first.dim(2);
    Tensorf batch({int(indices.size()), c, h, w});
    const std::size_t stride = first.numel();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Tensorf& px = samples[std::size_t(indices[i])].pixels;
        if (px.numel() != stride) throw DataError("make_batch: mixed image sizes");
        std::copy_n(px.data(), stride, batch.data() + i * stride);
    }
    return batch;
}

std::vector<float> batch_labels_normalized(const std::vector<ImageSample>& samples,
                                           const std::vector<int>& indices) {
    std::vector<float> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i)
        out[i] = float(samples[std::size_t(indices[i])].label.normalized());
    return out;
}

}  // namespace soapkd
