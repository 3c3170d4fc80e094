#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "keylabel/error.hpp"
#include "keylabel/io.hpp"

namespace kpl::io {

namespace {

static_assert(std::endian::native == std::endian::little, "binary PLY I/O assumes a little-endian host");

struct Property {
    std::string name;
    std::string type;
    bool list = false;
    std::string count_type;
};

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> properties;
};

struct Header {
    std::string format;
    std::vector<Element> elements;
};

std::size_t type_size(const std::string& t)
{
    static const std::map<std::string, std::size_t> sizes{
        {"char", 1},  {"uchar", 1},  {"int8", 1},   {"uint8", 1},   {"short", 2},  {"ushort", 2},
        {"int16", 2}, {"uint16", 2}, {"int", 4},    {"uint", 4},    {"int32", 4},  {"uint32", 4},
        {"float", 4}, {"float32", 4}, {"double", 8}, {"float64", 8}};
    const auto it = sizes.find(t);
    if (it == sizes.end())
        throw Error(Errc::IoError, "unknown PLY property type '" + t + "'");
    return it->second;
}

double read_binary(const char* p, const std::string& t)
{
    auto get = [p]<typename T>(T) {
        T v;
        std::memcpy(&v, p, sizeof v);
        return static_cast<double>(v);
    };
    if (t == "char" || t == "int8")
        return get(std::int8_t{});
    if (t == "uchar" || t == "uint8")
        return get(std::uint8_t{});
    if (t == "short" || t == "int16")
        return get(std::int16_t{});
    if (t == "ushort" || t == "uint16")
        return get(std::uint16_t{});
    if (t == "int" || t == "int32")
        return get(std::int32_t{});
    if (t == "uint" || t == "uint32")
        return get(std::uint32_t{});
    if (t == "float" || t == "float32")
        return get(float{});
    return get(double{});
}

Header parse_header(std::istream& in, const fs::path& path)
{
    std::string line;
    if (!std::getline(in, line) || line.substr(0, 3) != "ply")
        throw Error(Errc::IoError, "not a PLY file", path.string());
    Header h;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        if (key == "format") {
            ss >> h.format;
        } else if (key == "element") {
            Element e;
            ss >> e.name >> e.count;
            h.elements.push_back(e);
        } else if (key == "property") {
            if (h.elements.empty())
                throw Error(Errc::IoError, "property before element", path.string());
            Property p;
            std::string type;
            ss >> type;
            if (type == "list") {
                p.list = true;
                ss >> p.count_type >> p.type >> p.name;
            } else {
                p.type = type;
                ss >> p.name;
            }
            h.elements.back().properties.push_back(p);
        } else if (key == "end_header") {
            if (h.format != "ascii" && h.format != "binary_little_endian")
                throw Error(Errc::IoError, "unsupported PLY format '" + h.format + "'", path.string());
            return h;
        }
    }
    throw Error(Errc::IoError, "PLY header not terminated", path.string());
}

/// Reads every element; returns the vertex rows keyed by property name.
std::map<std::string, std::vector<double>> read_vertices(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::MissingFile, "cannot open PLY", path.string());
    const Header h = parse_header(in, path);
    std::map<std::string, std::vector<double>> columns;
    const bool ascii = h.format == "ascii";
    for (const auto& e : h.elements) {
        const bool keep = e.name == "vertex";
        for (std::size_t i = 0; i < e.count; ++i) {
            for (const auto& p : e.properties) {
                if (p.list) {
                    double n = 0;
                    if (ascii) {
                        in >> n;
                    } else {
                        char buf[8];
                        in.read(buf, static_cast<std::streamsize>(type_size(p.count_type)));
                        n = read_binary(buf, p.count_type);
                    }
                    for (std::size_t k = 0; k < static_cast<std::size_t>(n); ++k) {
                        if (ascii) {
                            double skip;
                            in >> skip;
                        } else {
                            in.ignore(static_cast<std::streamsize>(type_size(p.type)));
                        }
                    }
                    continue;
                }
                double value = 0;
                if (ascii) {
                    in >> value;
                } else {
                    char buf[8];
                    in.read(buf, static_cast<std::streamsize>(type_size(p.type)));
                    value = read_binary(buf, p.type);
                }
                if (keep)
                    columns[p.name].push_back(value);
            }
            if (!in)
                throw Error(Errc::IoError, "PLY body truncated in element '" + e.name + "'", path.string());
        }
    }
    return columns;
}

void write_ply(const fs::path& path, PlyFormat format, std::size_t count,
               const std::vector<std::pair<std::string, std::string>>& properties,
               const std::function<void(std::size_t, std::vector<double>&)>& row)
{
    std::ostringstream out;
    out << "ply\nformat " << (format == PlyFormat::Ascii ? "ascii" : "binary_little_endian") << " 1.0\n";
    out << "element vertex " << count << "\n";
    for (const auto& [type, name] : properties)
        out << "property " << type << " " << name << "\n";
    out << "end_header\n";
    std::vector<double> values(properties.size());
    char text[64];
    for (std::size_t i = 0; i < count; ++i) {
        row(i, values);
        for (std::size_t k = 0; k < properties.size(); ++k) {
            const std::string& type = properties[k].first;
            if (format == PlyFormat::Ascii) {
                if (type == "double" || type == "float")
                    std::snprintf(text, sizeof text, "%.17g", values[k]);
                else
                    std::snprintf(text, sizeof text, "%lld", static_cast<long long>(values[k]));
                out << (k ? " " : "") << text;
                continue;
            }
            if (type == "double") {
                out.write(reinterpret_cast<const char*>(&values[k]), 8);
            } else if (type == "float") {
                const float f = static_cast<float>(values[k]);
                out.write(reinterpret_cast<const char*>(&f), 4);
            } else if (type == "uint") {
                const auto u = static_cast<std::uint32_t>(values[k]);
                out.write(reinterpret_cast<const char*>(&u), 4);
            } else {
                const auto c = static_cast<std::uint8_t>(values[k]);
                out.write(reinterpret_cast<const char*>(&c), 1);
            }
        }
        if (format == PlyFormat::Ascii)
            out << "\n";
    }
    write_file_atomic(path, out.str());
}

}  // namespace

void write_dense_ply(const fs::path& path, const DenseModel& model, PlyFormat format)
{
    if (model.scene_ids.size() != model.points.size())
        throw Error(Errc::LengthMismatch, "dense model needs one scene id per point");
    write_ply(path, format, model.size(), {{"double", "x"}, {"double", "y"}, {"double", "z"}, {"uint", "scene"}},
              [&](std::size_t i, std::vector<double>& v) {
                  v = {model.points[i].x(), model.points[i].y(), model.points[i].z(),
                       static_cast<double>(model.scene_ids[i])};
              });
}

DenseModel read_dense_ply(const fs::path& path)
{
    auto columns = read_vertices(path);
    if (!columns.count("x") || !columns.count("y") || !columns.count("z"))
        throw Error(Errc::IoError, "PLY lacks x/y/z vertex properties", path.string());
    DenseModel model;
    const auto& x = columns["x"];
    const auto& y = columns["y"];
    const auto& z = columns["z"];
    const auto scene = columns.find("scene");
    for (std::size_t i = 0; i < x.size(); ++i) {
        model.points.emplace_back(x[i], y[i], z[i]);
        model.scene_ids.push_back(scene != columns.end() ? static_cast<std::uint32_t>(scene->second[i]) : 0u);
    }
    return model;
}

ScenePointCloud read_point_cloud_ply(const fs::path& path)
{
    auto columns = read_vertices(path);
    if (!columns.count("x") || !columns.count("y") || !columns.count("z"))
        throw Error(Errc::IoError, "PLY lacks x/y/z vertex properties", path.string());
    ScenePointCloud cloud;
    const std::size_t n = columns["x"].size();
    for (std::size_t i = 0; i < n; ++i)
        cloud.points.emplace_back(columns["x"][i], columns["y"][i], columns["z"][i]);
    if (columns.count("nx") && columns.count("ny") && columns.count("nz"))
        for (std::size_t i = 0; i < n; ++i)
            cloud.normals.push_back(
                Eigen::Vector3d(columns["nx"][i], columns["ny"][i], columns["nz"][i]).normalized());
    if (columns.count("red") && columns.count("green") && columns.count("blue"))
        for (std::size_t i = 0; i < n; ++i)
            cloud.colors.push_back({static_cast<std::uint8_t>(columns["red"][i]),
                                    static_cast<std::uint8_t>(columns["green"][i]),
                                    static_cast<std::uint8_t>(columns["blue"][i])});
    return cloud;
}

void write_point_cloud_ply(const fs::path& path, const ScenePointCloud& cloud, PlyFormat format)
{
    std::vector<std::pair<std::string, std::string>> props{{"double", "x"}, {"double", "y"}, {"double", "z"}};
    const bool normals = cloud.hasNormals();
    const bool colors = cloud.colors.size() == cloud.points.size() && !cloud.points.empty();
    if (normals)
        props.insert(props.end(), {{"double", "nx"}, {"double", "ny"}, {"double", "nz"}});
    if (colors)
        props.insert(props.end(), {{"uchar", "red"}, {"uchar", "green"}, {"uchar", "blue"}});
    write_ply(path, format, cloud.points.size(), props, [&](std::size_t i, std::vector<double>& v) {
        v.assign({cloud.points[i].x(), cloud.points[i].y(), cloud.points[i].z()});
        if (normals)
            v.insert(v.end(), {cloud.normals[i].x(), cloud.normals[i].y(), cloud.normals[i].z()});
        if (colors)
            v.insert(v.end(), {double(cloud.colors[i][0]), double(cloud.colors[i][1]), double(cloud.colors[i][2])});
    });
}

void write_points_ply(const fs::path& path, std::span<const Point3> points, PlyFormat format)
{
    write_ply(path, format, points.size(), {{"double", "x"}, {"double", "y"}, {"double", "z"}},
              [&](std::size_t i, std::vector<double>& v) { v = {points[i].x(), points[i].y(), points[i].z()}; });
}

}  // namespace kpl::io
