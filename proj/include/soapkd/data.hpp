#pragma once

#include <optional>
#include <string>
#include <vector>

#include "soapkd/tensor.hpp"

namespace soapkd {

// Orientation angle in degrees, [0, 180). Bow and stern are
// indistinguishable, so 180 wraps to 0.
struct AngleLabel {
    double degrees = 0.0;

    static AngleLabel from_degrees(double deg);
    static AngleLabel from_normalized(double norm);
    double normalized() const { return degrees / 180.0; }
};

// Wrap an arbitrary angle into [0, 180).
double wrap_degrees(double deg);

// min(d, 180 - d) on wrapped angles; bounded by 90.
double circular_distance_degrees(double a, double b);

struct ImageSample {
    Tensorf pixels;  // {C, H, W}, values in [0, 1]
    AngleLabel label;
    int ship_class = -1;  // -1 = unlabeled
};

struct DatasetSplit {
    std::vector<ImageSample> train;
    std::vector<ImageSample> val;
    std::vector<ImageSample> test;
    std::uint64_t seed = 0;
};

// Pad to square (blank value 0.0, content centered, odd pixel goes to
// bottom/right), then bilinear-resize to target x target.
Tensorf squarify_and_resize(const Tensorf& image, int target);

// Deterministic shuffled 8:2 train/val split; val takes the remainder.
DatasetSplit split_dataset(const std::vector<ImageSample>& samples,
                           std::uint64_t seed);

// Procedural oriented-ship images with analytically known angles and a
// small set of shape templates serving as ship classes.
constexpr int kSynthClassCount = 5;
std::vector<ImageSample> synth_generate(int n, int resolution, std::uint64_t seed);

// Second-moment principal axis of the bright region, in degrees [0, 180).
// Independent of the renderer; used as a label oracle.
double principal_axis_degrees(const Tensorf& image);

// PNG directory + CSV manifest ("path,angle_degrees,class").
void write_dataset(const std::string& dir, const std::vector<ImageSample>& samples,
                   const std::string& manifest_name = "manifest.csv");
std::vector<ImageSample> read_dataset(const std::string& dir,
                                      const std::string& manifest_name = "manifest.csv");

// Stack sample pixels into an {N, C, H, W} batch.
Tensorf make_batch(const std::vector<ImageSample>& samples,
                   const std::vector<int>& indices);
std::vector<float> batch_labels_normalized(const std::vector<ImageSample>& samples,
                                           const std::vector<int>& indices);

}  // namespace soapkd
