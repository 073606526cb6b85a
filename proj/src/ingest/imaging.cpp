#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ctseg/error.hpp"
#include "ctseg/ingest.hpp"

namespace fs = std::filesystem;

namespace ctseg {

void WindowSpec::validate() const {
    if (!(width_hu > 0.0) || !std::isfinite(width_hu) || !std::isfinite(center_hu)) {
        fail(ErrorCode::invalid_argument, "window width must be positive and finite");
    }
}

std::uint8_t window_value(double hu, const WindowSpec& window) {
    const double low = window.center_hu - window.width_hu / 2.0;
    const double scaled = (hu - low) / window.width_hu * 255.0;
    const double rounded = std::floor(scaled + 0.5);
    return static_cast<std::uint8_t>(std::clamp(rounded, 0.0, 255.0));
}

Gray8Image window_to_gray(const FloatImage& hu, const WindowSpec& window) {
    window.validate();
    if (hu.channels() != 1) fail(ErrorCode::invalid_argument, "HU slice must be single-channel");
    Gray8Image gray(hu.rows(), hu.cols());
    auto in = hu.pixels();
    auto out = gray.pixels();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = window_value(in[i], window);
    return gray;
}

void export_image(const Image<std::uint8_t>& image, const fs::path& path, ImageFormat format) {
    if (image.empty() || (image.channels() != 1 && image.channels() != 3)) {
        fail(ErrorCode::invalid_argument, "export_image expects a nonempty gray or RGB image");
    }
    const int type = image.channels() == 1 ? CV_8UC1 : CV_8UC3;
    cv::Mat view(image.rows(), image.cols(), type, const_cast<std::uint8_t*>(image.data()));
    cv::Mat bgr;
    if (image.channels() == 3) {
        cv::cvtColor(view, bgr, cv::COLOR_RGB2BGR);
    } else {
        bgr = view;
    }
    std::vector<int> params;
    if (format == ImageFormat::jpeg) params = {cv::IMWRITE_JPEG_QUALITY, 95};
    const std::string ext = format == ImageFormat::jpeg ? ".jpg" : ".png";
    std::vector<uchar> encoded;
    bool ok = false;
    try {
        ok = cv::imencode(ext, bgr, encoded, params);
    } catch (const cv::Exception&) {
        ok = false;
    }
    if (!ok) fail(ErrorCode::io, "cannot encode image for '" + path.string() + "'");
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) fail(ErrorCode::io, "cannot write '" + path.string() + "'");
    const std::size_t written = std::fwrite(encoded.data(), 1, encoded.size(), f);
    const bool closed = std::fclose(f) == 0;
    if (written != encoded.size() || !closed) fail(ErrorCode::io, "short write to '" + path.string() + "'");
}

namespace {

cv::Mat decode(const fs::path& path, int flags) {
    cv::Mat m = cv::imread(path.string(), flags);
    if (m.empty()) fail(ErrorCode::io, "cannot decode image '" + path.string() + "'");
    return m;
}

}  // namespace

Gray8Image read_gray_image(const fs::path& path) {
    cv::Mat m = decode(path, cv::IMREAD_GRAYSCALE);
    Gray8Image out(m.rows, m.cols);
    for (int r = 0; r < m.rows; ++r) std::copy_n(m.ptr<std::uint8_t>(r), m.cols, &out.at(r, 0));
    return out;
}

RgbImage read_rgb_image(const fs::path& path) {
    cv::Mat bgr = decode(path, cv::IMREAD_COLOR);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    RgbImage out(rgb.rows, rgb.cols, 3);
    for (int r = 0; r < rgb.rows; ++r) std::copy_n(rgb.ptr<std::uint8_t>(r), rgb.cols * 3, &out.at(r, 0));
    return out;
}

}  // namespace ctseg
