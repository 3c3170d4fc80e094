#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "keylabel/error.hpp"
#include "keylabel/io.hpp"

namespace kpl::io {

void write_file_atomic(const fs::path& path, std::string_view bytes)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp" + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error(Errc::IoError, std::string("cannot open for writing: ") + std::strerror(errno), tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            throw Error(Errc::IoError, "write failed", tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw Error(Errc::IoError, "rename failed: " + ec.message(), path.string());
    }
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::MissingFile, "cannot open file", path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<RigidTransformd> regauge(std::span<const RigidTransformd> poses)
{
    std::vector<RigidTransformd> out;
    if (poses.empty())
        return out;
    const RigidTransformd first_inv = poses.front().inverse();
    out.reserve(poses.size());
    out.push_back(RigidTransformd());
    for (std::size_t i = 1; i < poses.size(); ++i)
        out.push_back(first_inv * poses[i]);
    return out;
}

Trajectory read_trajectory(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(Errc::MissingFile, "trajectory file not found", path.string());
    Trajectory raw;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#')
            continue;
        std::istringstream row(line);
        double v[8];
        int n = 0;
        std::string token;
        while (row >> token) {
            if (n == 8) {
                n = 9;
                break;
            }
            char* end = nullptr;
            v[n] = std::strtod(token.c_str(), &end);
            if (end == token.c_str() || *end != '\0' || !std::isfinite(v[n]))
                throw Error(Errc::MalformedRow, "non-numeric value '" + token + "'",
                            path.string() + ":" + std::to_string(line_no));
            ++n;
        }
        if (n != 8)
            throw Error(Errc::MalformedRow, "expected 8 columns (timestamp tx ty tz qx qy qz qw)",
                        path.string() + ":" + std::to_string(line_no));
        const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
        if (!(q.norm() > 1e-12))
            throw Error(Errc::MalformedRow, "zero quaternion", path.string() + ":" + std::to_string(line_no));
        raw.timestamps.push_back(v[0]);
        raw.poses.emplace_back(q.normalized(), Eigen::Vector3d(v[1], v[2], v[3]));
    }
    raw.poses = regauge(raw.poses);
    return raw;
}

void write_trajectory(const fs::path& path, const Trajectory& trajectory)
{
    if (trajectory.timestamps.size() != trajectory.poses.size())
        throw Error(Errc::LengthMismatch, "one timestamp per pose is required");
    std::string text;
    char row[512];
    for (std::size_t i = 0; i < trajectory.poses.size(); ++i) {
        const auto& p = trajectory.poses[i];
        const Eigen::Vector4d q = p.wxyz();
        std::snprintf(row, sizeof row, "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", trajectory.timestamps[i],
                      p.translation().x(), p.translation().y(), p.translation().z(), q[1], q[2], q[3], q[0]);
        text += row;
    }
    write_file_atomic(path, text);
}

}  // namespace kpl::io
