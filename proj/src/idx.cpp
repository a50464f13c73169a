#include "fprog/idx.hpp"

#include <algorithm>
#include <fstream>

#include "fprog/errors.hpp"
#include "fprog/util.hpp"

namespace fprog {

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw ValidationError("dataset file truncated: " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

std::vector<std::uint8_t> read_payload(std::ifstream& in, std::size_t n,
                                       const std::string& path) {
    std::vector<std::uint8_t> bytes(n);
    if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n)))
        throw ValidationError("dataset file truncated: " + path);
    char extra;
    if (in.read(&extra, 1))
        throw ValidationError("dataset file has trailing bytes: " + path);
    return bytes;
}

} // namespace

void write_idx_images(const std::string& path, std::int64_t count, int rows, int cols,
                      const std::vector<std::uint8_t>& pixels) {
    if (pixels.size() != static_cast<std::size_t>(count) * rows * cols)
        throw ValidationError("image buffer does not match count*rows*cols");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write dataset file: " + path);
    put_u32(out, 0x0803); // ubyte, 3 dimensions
    put_u32(out, static_cast<std::uint32_t>(count));
    put_u32(out, static_cast<std::uint32_t>(rows));
    put_u32(out, static_cast<std::uint32_t>(cols));
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    if (!out) throw ValidationError("short write on dataset file: " + path);
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write dataset file: " + path);
    put_u32(out, 0x0801); // ubyte, 1 dimension
    put_u32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
    if (!out) throw ValidationError("short write on dataset file: " + path);
}

DigitDataset load_digit_dataset(const std::string& images_path,
                                const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw ValidationError("cannot open dataset file: " + images_path);
    if (get_u32(imgs, images_path) != 0x0803)
        throw ValidationError("not an IDX ubyte image file: " + images_path);
    DigitDataset ds;
    ds.count = get_u32(imgs, images_path);
    ds.rows = static_cast<int>(get_u32(imgs, images_path));
    ds.cols = static_cast<int>(get_u32(imgs, images_path));
    if (ds.count < 1 || ds.rows < 1 || ds.cols < 1)
        throw ValidationError("empty dataset: " + images_path);
    ds.images = read_payload(imgs, static_cast<std::size_t>(ds.count) * ds.rows * ds.cols,
                             images_path);

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw ValidationError("cannot open dataset file: " + labels_path);
    if (get_u32(labs, labels_path) != 0x0801)
        throw ValidationError("not an IDX ubyte label file: " + labels_path);
    std::int64_t label_count = get_u32(labs, labels_path);
    if (label_count != ds.count)
        throw ValidationError("dataset mismatch: " + std::to_string(ds.count) + " images vs " +
                              std::to_string(label_count) + " labels");
    ds.labels = read_payload(labs, static_cast<std::size_t>(label_count), labels_path);
    for (std::uint8_t l : ds.labels)
        if (l > 9)
            throw ValidationError("corrupt label " + std::to_string(int(l)) + " in " +
                                  labels_path);
    return ds;
}

namespace {

// Seven-segment layout inside a 20x20 glyph box; each entry is a filled
// rectangle {top, left, bottom, right} (inclusive).
struct Seg {
    int t, l, b, r;
};
constexpr Seg kSegs[7] = {
    {3, 4, 4, 15},   // top bar
    {9, 4, 10, 15},  // middle bar
    {15, 4, 16, 15}, // bottom bar
    {3, 3, 10, 4},   // upper left
    {9, 3, 16, 4},   // lower left
    {3, 15, 10, 16}, // upper right
    {9, 15, 16, 16}, // lower right
};
//                          top mid bot ul  ll  ur  lr
constexpr bool kDigit[10][7] = {
    {1, 0, 1, 1, 1, 1, 1}, // 0
    {0, 0, 0, 0, 0, 1, 1}, // 1
    {1, 1, 1, 0, 1, 1, 0}, // 2
    {1, 1, 1, 0, 0, 1, 1}, // 3
    {0, 1, 0, 1, 0, 1, 1}, // 4
    {1, 1, 1, 1, 0, 0, 1}, // 5
    {1, 1, 1, 1, 1, 0, 1}, // 6
    {1, 0, 0, 0, 0, 1, 1}, // 7
    {1, 1, 1, 1, 1, 1, 1}, // 8
    {1, 1, 1, 1, 0, 1, 1}, // 9
};

} // namespace

DigitDataset synth_digits(std::int64_t count, int rows, int cols, std::uint64_t seed) {
    if (count < 1) throw ValidationError("dataset size must be >= 1");
    if (rows < 20 || cols < 20)
        throw ValidationError("synthetic digits need a canvas of at least 20x20");
    RandomSource rng(seed);
    DigitDataset ds;
    ds.count = count;
    ds.rows = rows;
    ds.cols = cols;
    ds.images.assign(static_cast<std::size_t>(count) * rows * cols, 0);
    ds.labels.resize(static_cast<std::size_t>(count));

    for (std::int64_t i = 0; i < count; ++i) {
        int digit = static_cast<int>(i % 10);
        ds.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(digit);
        int jy = static_cast<int>(rng.below(5)) - 2;
        int jx = static_cast<int>(rng.below(5)) - 2;
        int oy = (rows - 20) / 2 + jy;
        int ox = (cols - 20) / 2 + jx;
        oy = std::clamp(oy, 0, rows - 20);
        ox = std::clamp(ox, 0, cols - 20);
        double brightness = rng.uniform(0.7, 1.0);
        std::uint8_t* img = ds.images.data() + static_cast<std::size_t>(i) * rows * cols;
        for (int s = 0; s < 7; ++s) {
            if (!kDigit[digit][s]) continue;
            const Seg& g = kSegs[s];
            for (int y = g.t; y <= g.b; ++y)
                for (int x = g.l; x <= g.r; ++x)
                    img[(oy + y) * cols + (ox + x)] =
                        static_cast<std::uint8_t>(255.0 * brightness);
        }
        for (int p = 0; p < rows * cols; ++p) {
            int noisy = img[p] + static_cast<int>(rng.below(40));
            img[p] = static_cast<std::uint8_t>(std::min(noisy, 255));
        }
    }
    return ds;
}

Tensor sample_tensor(const DigitDataset& ds, std::int64_t i, int h, int w) {
    if (i < 0 || i >= ds.count) throw ValidationError("sample index out of range");
    if (h > ds.rows || w > ds.cols)
        throw ValidationError("crop " + std::to_string(h) + "x" + std::to_string(w) +
                              " exceeds the stored " + std::to_string(ds.rows) + "x" +
                              std::to_string(ds.cols) + " images");
    int oy = (ds.rows - h) / 2;
    int ox = (ds.cols - w) / 2;
    Tensor t(h, w, 1);
    const std::uint8_t* img = ds.images.data() + static_cast<std::size_t>(i) * ds.rows * ds.cols;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            t.at(y, x, 0) = static_cast<double>(img[(oy + y) * ds.cols + (ox + x)]) / 255.0;
    return t;
}

} // namespace fprog
