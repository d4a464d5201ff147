#include "fcc/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fcc/errors.hpp"

namespace fcc {

namespace {

// expects CV_32FC3 RGB in [0,1]
Tensor mat_to_chw(const cv::Mat& img) {
    Tensor t({3, img.rows, img.cols});
    auto out = t.data();
    const std::int64_t hw = static_cast<std::int64_t>(img.rows) * img.cols;
    for (int y = 0; y < img.rows; ++y) {
        const cv::Vec3f* row = img.ptr<cv::Vec3f>(y);
        for (int x = 0; x < img.cols; ++x) {
            const std::int64_t p = static_cast<std::int64_t>(y) * img.cols + x;
            out[0 * hw + p] = row[x][0];
            out[1 * hw + p] = row[x][1];
            out[2 * hw + p] = row[x][2];
        }
    }
    return t;
}

cv::Mat chw_to_mat(const Tensor& t) {
    if (t.rank() != 3 || t.dim(0) != 3) {
        throw DimensionError("expected a [3,H,W] tensor, got " + shape_str(t.shape()));
    }
    const int h = static_cast<int>(t.dim(1));
    const int w = static_cast<int>(t.dim(2));
    cv::Mat img(h, w, CV_32FC3);
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    auto in = t.data();
    for (int y = 0; y < h; ++y) {
        cv::Vec3f* row = img.ptr<cv::Vec3f>(y);
        for (int x = 0; x < w; ++x) {
            const std::int64_t p = static_cast<std::int64_t>(y) * w + x;
            row[x] = {in[0 * hw + p], in[1 * hw + p], in[2 * hw + p]};
        }
    }
    return img;
}

// pad to square with white, centered, then bilinear-resize to 224
cv::Mat square_and_resize(cv::Mat img, float white) {
    if (img.rows != img.cols) {
        const int side = std::max(img.rows, img.cols);
        const int top = (side - img.rows) / 2;
        const int bottom = side - img.rows - top;
        const int left = (side - img.cols) / 2;
        const int right = side - img.cols - left;
        cv::copyMakeBorder(img, img, top, bottom, left, right, cv::BORDER_CONSTANT,
                           cv::Scalar(white, white, white));
    }
    if (img.rows != kImageSize) {
        cv::resize(img, img, cv::Size(kImageSize, kImageSize), 0, 0, cv::INTER_LINEAR);
    }
    return img;
}

}  // namespace

Tensor load_image(const std::string& path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);  // grayscale replicates to 3 channels
    if (bgr.empty()) {
        throw IoError("cannot decode image: " + path);
    }
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    rgb = square_and_resize(rgb, 255.0f);
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
    return mat_to_chw(f);
}

Tensor preprocess_image(const Tensor& chw) {
    if (chw.rank() == 3 && chw.dim(0) == 3 && chw.dim(1) == kImageSize &&
        chw.dim(2) == kImageSize) {
        return chw;  // idempotent on already-preprocessed inputs
    }
    cv::Mat img = chw_to_mat(chw);
    img = square_and_resize(img, 1.0f);
    return mat_to_chw(img);
}

void write_png(const std::string& path, const Tensor& chw) {
    cv::Mat img = chw_to_mat(chw);
    cv::Mat u8;
    img.convertTo(u8, CV_8UC3, 255.0);
    cv::Mat bgr;
    cv::cvtColor(u8, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path, bgr)) {
        throw IoError("cannot write PNG: " + path);
    }
}

}  // namespace fcc
