#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "keylabel/geometry.hpp"

namespace kpl {

/// One human click.
struct AnnotationEntry {
    std::string scene;
    std::size_t frame = 0;
    int keypoint = 0;
    Pixel pixel = Pixel::Zero();
    std::string timestamp;
    std::string author;

    bool operator==(const AnnotationEntry&) const = default;
};

struct AnnotationFile {
    std::string object;
    int num_keypoints = 0;
    std::vector<std::string> keypoint_names;
    std::vector<AnnotationEntry> entries;

    bool operator==(const AnnotationFile&) const = default;
};

}  // namespace kpl
