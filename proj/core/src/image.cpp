#include "bdcd/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <stdexcept>

namespace bdcd {

namespace {

cv::Mat to_mat(const ImageU8& img) {
    int type = img.c == 3 ? CV_8UC3 : CV_8UC1;
    cv::Mat m(static_cast<int>(img.h), static_cast<int>(img.w), type);
    if (img.c == 3) {
        // RGB -> BGR
        for (long y = 0; y < img.h; ++y)
            for (long x = 0; x < img.w; ++x) {
                auto& px = m.at<cv::Vec3b>(y, x);
                px[0] = img.at(y, x, 2);
                px[1] = img.at(y, x, 1);
                px[2] = img.at(y, x, 0);
            }
    } else {
        for (long y = 0; y < img.h; ++y)
            for (long x = 0; x < img.w; ++x) m.at<uint8_t>(y, x) = img.at(y, x, 0);
    }
    return m;
}

ImageU8 from_mat(const cv::Mat& m) {
    ImageU8 img(m.rows, m.cols, m.channels() == 3 ? 3 : 1);
    if (m.channels() == 3) {
        for (long y = 0; y < img.h; ++y)
            for (long x = 0; x < img.w; ++x) {
                const auto& px = m.at<cv::Vec3b>(y, x);
                img.at(y, x, 0) = px[2];
                img.at(y, x, 1) = px[1];
                img.at(y, x, 2) = px[0];
            }
    } else {
        for (long y = 0; y < img.h; ++y)
            for (long x = 0; x < img.w; ++x) img.at(y, x, 0) = m.at<uint8_t>(y, x);
    }
    return img;
}

}  // namespace

ImageU8 read_image(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw std::runtime_error("cannot read image: " + path);
    if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2BGR);
    if (m.channels() != 1 && m.channels() != 3)
        throw std::runtime_error("unsupported channel count in " + path);
    return from_mat(m);
}

void write_image(const std::string& path, const ImageU8& img) {
    if (!cv::imwrite(path, to_mat(img)))
        throw std::runtime_error("cannot write image: " + path);
}

void write_mask_png(const std::string& path, const Mask& m) {
    ImageU8 img(m.h, m.w, 1);
    img.v.assign(m.v.begin(), m.v.end());
    write_image(path, img);
}

Mask read_mask_png(const std::string& path) {
    ImageU8 img = read_image(path);
    if (img.c != 1) throw std::runtime_error("mask PNG must be single-channel: " + path);
    Mask m(img.h, img.w);
    m.v.assign(img.v.begin(), img.v.end());
    return m;
}

ImageU8 resize_bilinear(const ImageU8& img, long oh, long ow) {
    cv::Mat out;
    cv::resize(to_mat(img), out, cv::Size(static_cast<int>(ow), static_cast<int>(oh)), 0, 0,
               cv::INTER_LINEAR);
    return from_mat(out);
}

Mask resize_nearest(const Mask& m, long oh, long ow) {
    cv::Mat src(static_cast<int>(m.h), static_cast<int>(m.w), CV_8UC1);
    for (long y = 0; y < m.h; ++y)
        for (long x = 0; x < m.w; ++x) src.at<uint8_t>(y, x) = m.at(y, x);
    cv::Mat out;
    cv::resize(src, out, cv::Size(static_cast<int>(ow), static_cast<int>(oh)), 0, 0,
               cv::INTER_NEAREST);
    Mask r(oh, ow);
    for (long y = 0; y < oh; ++y)
        for (long x = 0; x < ow; ++x) r.at(y, x) = out.at<uint8_t>(y, x);
    return r;
}

}  // namespace bdcd
