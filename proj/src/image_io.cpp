#include <cstdio>
#include <cstring>
#include <memory>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <png.h>

#include "ifse/dataset.hpp"

namespace ifse::data {

cv::Mat read_rgb(const std::filesystem::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) {
        throw IoError("cannot decode image " + path.string());
    }
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return rgb;
}

cv::Mat decode_rgb(const std::vector<std::uint8_t>& bytes) {
    cv::Mat bgr = cv::imdecode(bytes, cv::IMREAD_COLOR);
    if (bgr.empty()) {
        throw IoError("cannot decode image bytes");
    }
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return rgb;
}

std::vector<std::uint8_t> encode_rgb_png(const cv::Mat& rgb) {
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    std::vector<std::uint8_t> out;
    if (!cv::imencode(".png", bgr, out)) {
        throw IoError("PNG encoding failed");
    }
    return out;
}

namespace {

struct MemoryReader {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t pos;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t n) {
    auto* src = static_cast<MemoryReader*>(png_get_io_ptr(png));
    if (src->pos + n > src->size) {
        png_error(png, "unexpected end of PNG data");
    }
    std::memcpy(out, src->data + src->pos, n);
    src->pos += n;
}

thread_local std::string g_png_error;

void on_png_error(png_structp png, png_const_charp message) {
    g_png_error = message;
    png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

// png_read_png keeps every intermediate allocation inside libpng, so the only
// state live across the setjmp is the two libpng handles.
LabelMap decode_labels(void (*bind)(png_structp, void*), void* io, const std::string& what) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, &on_png_error, &on_png_warning);
    if (!png) throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("cannot decode label PNG " + what + ": " + g_png_error);
    }
    bind(png, io);
    png_read_png(png, info, PNG_TRANSFORM_PACKING | PNG_TRANSFORM_STRIP_16, nullptr);

    const auto width = static_cast<int>(png_get_image_width(png, info));
    const auto height = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    const int color_type = png_get_color_type(png, info);
    png_bytepp rows = png_get_rows(png, info);
    const bool single = color_type == PNG_COLOR_TYPE_PALETTE || color_type == PNG_COLOR_TYPE_GRAY ||
                        color_type == PNG_COLOR_TYPE_GRAY_ALPHA;

    std::vector<std::uint8_t> labels;
    if (single) {
        labels.resize(static_cast<std::size_t>(width) * height);
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c)
                labels[static_cast<std::size_t>(r) * width + c] = rows[r][c * channels];
    }
    png_destroy_read_struct(&png, &info, nullptr);
    if (!single) {
        throw IoError("label PNG " + what + " is not single-channel or palette");
    }
    return LabelMap(height, width, std::move(labels));
}

} // namespace

LabelMap read_label_png(const std::filesystem::path& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!file) {
        throw IoError("cannot open " + path.string());
    }
    return decode_labels(
        [](png_structp png, void* io) { png_init_io(png, static_cast<FILE*>(io)); }, file.get(),
        path.string());
}

LabelMap decode_label_png(const std::vector<std::uint8_t>& bytes) {
    MemoryReader reader{bytes.data(), bytes.size(), 0};
    return decode_labels(
        [](png_structp png, void* io) { png_set_read_fn(png, io, &read_from_memory); }, &reader,
        "<memory>");
}

std::vector<std::uint8_t> encode_mask_png(const BinaryMask& mask) {
    cv::Mat m(mask.height(), mask.width(), CV_8UC1);
    for (int r = 0; r < mask.height(); ++r)
        for (int c = 0; c < mask.width(); ++c) m.at<std::uint8_t>(r, c) = mask(r, c) ? 255 : 0;
    std::vector<std::uint8_t> out;
    if (!cv::imencode(".png", m, out)) {
        throw IoError("PNG encoding failed");
    }
    return out;
}

BinaryMask decode_mask_png(const std::vector<std::uint8_t>& bytes) {
    const LabelMap labels = decode_label_png(bytes);
    BinaryMask out(labels.height(), labels.width());
    for (int r = 0; r < labels.height(); ++r)
        for (int c = 0; c < labels.width(); ++c) out.set(r, c, labels(r, c) != 0);
    return out;
}

void write_label_png(const std::filesystem::path& path, const LabelMap& labels) {
    cv::Mat m(labels.height(), labels.width(), CV_8UC1,
              const_cast<std::uint8_t*>(labels.values().data()));
    if (!cv::imwrite(path.string(), m)) {
        throw IoError("cannot write " + path.string());
    }
}

} // namespace ifse::data
