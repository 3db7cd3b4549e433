#include "e2bki/frame_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace e2bki {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace {

[[noreturn]] void fail(const std::string& path, int line, const std::string& msg) {
    throw FrameParseError(path + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::istringstream ss(line);
    std::string f;
    while (ss >> f) fields.push_back(f);
    return fields;
}

double to_double(const std::string& path, int line, const std::string& s) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail(path, line, "expected a number, got '" + s + "'");
    }
}

long to_long(const std::string& path, int line, const std::string& s) {
    try {
        std::size_t pos = 0;
        const long v = std::stol(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail(path, line, "expected an integer, got '" + s + "'");
    }
}

std::string read_line(const std::string& path, std::istream& in, int& line_no) {
    std::string line;
    if (!std::getline(in, line)) fail(path, line_no + 1, "unexpected end of file");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

} // namespace

Frame read_frame_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FrameParseError(path + ": cannot open file");
    int line_no = 0;

    if (read_line(path, in, line_no) != "E2BKI-FRAME v1")
        fail(path, line_no, "bad magic, expected 'E2BKI-FRAME v1'");

    auto header = split_fields(read_line(path, in, line_no));
    if (header.size() != 2 || header[0] != "classes")
        fail(path, line_no, "expected 'classes C'");
    const long classes = to_long(path, line_no, header[1]);
    if (classes < 2) fail(path, line_no, "need at least 2 classes");

    header = split_fields(read_line(path, in, line_no));
    if (header.size() != 2 || header[0] != "points")
        fail(path, line_no, "expected 'points N'");
    const long count = to_long(path, line_no, header[1]);
    if (count < 0) fail(path, line_no, "negative point count");

    header = split_fields(read_line(path, in, line_no));
    if (header.size() != 4 || header[0] != "origin")
        fail(path, line_no, "expected 'origin ox oy oz'");

    Frame frame;
    frame.class_count = static_cast<int>(classes);
    frame.origin = Eigen::Vector3d(to_double(path, line_no, header[1]),
                                   to_double(path, line_no, header[2]),
                                   to_double(path, line_no, header[3]));
    frame.points.reserve(count);

    const std::size_t fields_per_point = 3 + classes + 2;
    for (long i = 0; i < count; ++i) {
        const auto fields = split_fields(read_line(path, in, line_no));
        if (fields.size() != fields_per_point)
            fail(path, line_no,
                 "expected " + std::to_string(fields_per_point) + " fields, got " +
                     std::to_string(fields.size()));
        Eigen::Vector3d pos(to_double(path, line_no, fields[0]),
                            to_double(path, line_no, fields[1]),
                            to_double(path, line_no, fields[2]));
        Eigen::VectorXd probs(classes);
        for (long c = 0; c < classes; ++c)
            probs[c] = to_double(path, line_no, fields[3 + c]);
        const double u = to_double(path, line_no, fields[3 + classes]);
        const double range = to_double(path, line_no, fields[4 + classes]);
        try {
            frame.points.push_back(
                EvidentialPoint{std::move(pos), ClassProbability(std::move(probs)), u, range});
        } catch (const std::invalid_argument& e) {
            fail(path, line_no, e.what());
        }
    }

    std::string extra;
    while (std::getline(in, extra)) {
        ++line_no;
        if (!extra.empty() && extra.back() == '\r') extra.pop_back();
        if (!extra.empty()) fail(path, line_no, "trailing data after declared point count");
    }
    return frame;
}

void write_frame_file(const std::string& path, const Frame& frame) {
    std::ofstream out(path);
    if (!out) throw FrameParseError(path + ": cannot write file");
    out << "E2BKI-FRAME v1\n";
    out << "classes " << frame.class_count << "\n";
    out << "points " << frame.points.size() << "\n";
    out << "origin " << format_double(frame.origin.x()) << " "
        << format_double(frame.origin.y()) << " " << format_double(frame.origin.z())
        << "\n";
    for (const EvidentialPoint& p : frame.points) {
        out << format_double(p.position.x()) << " " << format_double(p.position.y()) << " "
            << format_double(p.position.z());
        for (int c = 0; c < p.prob.class_count(); ++c)
            out << " " << format_double(p.prob.values()[c]);
        out << " " << format_double(p.uncertainty) << " " << format_double(p.sensor_range)
            << "\n";
    }
}

std::vector<int> read_truth_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FrameParseError(path + ": cannot open file");
    int line_no = 0;

    if (read_line(path, in, line_no) != "E2BKI-TRUTH v1")
        fail(path, line_no, "bad magic, expected 'E2BKI-TRUTH v1'");
    auto header = split_fields(read_line(path, in, line_no));
    if (header.size() != 2 || header[0] != "points")
        fail(path, line_no, "expected 'points N'");
    const long count = to_long(path, line_no, header[1]);
    if (count < 0) fail(path, line_no, "negative point count");

    std::vector<int> classes;
    classes.reserve(count);
    for (long i = 0; i < count; ++i) {
        const auto fields = split_fields(read_line(path, in, line_no));
        if (fields.size() != 1) fail(path, line_no, "expected a single class index");
        classes.push_back(static_cast<int>(to_long(path, line_no, fields[0])));
    }
    return classes;
}

void write_truth_file(const std::string& path, const std::vector<int>& classes) {
    std::ofstream out(path);
    if (!out) throw FrameParseError(path + ": cannot write file");
    out << "E2BKI-TRUTH v1\n";
    out << "points " << classes.size() << "\n";
    for (int c : classes) out << c << "\n";
}

} // namespace e2bki
