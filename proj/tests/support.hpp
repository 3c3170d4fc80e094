#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "keylabel/geometry.hpp"

namespace kpl::test {

inline RigidTransformd random_transform(std::mt19937_64& rng, double max_translation = 1.0)
{
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(-max_translation, max_translation);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return RigidTransformd(q, Eigen::Vector3d(u(rng), u(rng), u(rng)));
}

inline Point3 random_point(std::mt19937_64& rng, double extent = 1.0)
{
    std::uniform_real_distribution<double> u(-extent, extent);
    return {u(rng), u(rng), u(rng)};
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        path_ = std::filesystem::temp_directory_path() /
                ("keylabel_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    static int& counter()
    {
        static int n = 0;
        return n;
    }
    std::filesystem::path path_;
};

}  // namespace kpl::test
