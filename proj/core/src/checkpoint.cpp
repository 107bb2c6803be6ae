#include <bit>
#include <cstring>
#include <fstream>

#include "sba/error.hpp"
#include "sba/network.hpp"

namespace sba {

namespace {

constexpr char kMagic[4] = {'S', 'B', 'A', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char bytes[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(bytes), 4);
}

void put_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), 8);
}

class Reader {
 public:
  Reader(std::istream& is, const std::filesystem::path& path) : is_(is), path_(path) {}

  void read(unsigned char* dst, std::size_t n) {
    is_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw FormatError(path_.string() + ": truncated checkpoint at byte offset " +
                        std::to_string(offset_ + static_cast<std::size_t>(is_.gcount())));
    }
    offset_ += n;
  }

  std::uint32_t u32() {
    unsigned char b[4];
    read(b, 4);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  }

  double f64() {
    unsigned char b[8];
    read(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
  }

  std::size_t offset() const { return offset_; }

 private:
  std::istream& is_;
  const std::filesystem::path& path_;
  std::size_t offset_ = 0;
};

}  // namespace

void save_checkpoint(const LayerStack& net, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, 4);
  const auto widths = net.widths();
  put_u32(os, static_cast<std::uint32_t>(widths.size()));
  for (auto w : widths) put_u32(os, static_cast<std::uint32_t>(w));
  const auto eligible = net.eligible_splits();
  put_u32(os, static_cast<std::uint32_t>(eligible.size()));
  for (auto k : eligible) put_u32(os, static_cast<std::uint32_t>(k));
  for (const auto& layer : net.layers()) {
    for (double v : layer.weight.values()) put_f64(os, v);
    for (double v : layer.bias.values()) put_f64(os, v);
  }
  os.flush();
  if (!os) throw Error("failed writing checkpoint: " + path.string());
}

LayerStack load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint: " + path.string());
  Reader in(is, path);
  unsigned char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path.string() + ": bad magic at byte offset 0 (expected SBA1)");
  }
  const std::uint32_t width_count = in.u32();
  if (width_count < 2 || width_count > 1024) {
    throw FormatError(path.string() + ": implausible width count at byte offset 4");
  }
  std::vector<std::size_t> widths;
  for (std::uint32_t i = 0; i < width_count; ++i) {
    const std::size_t at = in.offset();
    const std::uint32_t w = in.u32();
    if (w == 0 || w > (1u << 20)) {
      throw FormatError(path.string() + ": implausible width at byte offset " +
                        std::to_string(at));
    }
    widths.push_back(w);
  }
  const std::uint32_t eligible_count = in.u32();
  if (eligible_count > width_count) {
    throw FormatError(path.string() + ": eligible-set size exceeds layer count");
  }
  std::vector<std::size_t> eligible;
  for (std::uint32_t i = 0; i < eligible_count; ++i) eligible.push_back(in.u32());
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    std::vector<double> w(widths[l] * widths[l + 1]), b(widths[l + 1]);
    for (double& v : w) v = in.f64();
    for (double& v : b) v = in.f64();
    layers.push_back(DenseLayer{Tensor(Shape{widths[l], widths[l + 1]}, std::move(w)),
                                Tensor(Shape{widths[l + 1]}, std::move(b)),
                                l + 2 < widths.size()});
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after byte offset " +
                      std::to_string(in.offset()));
  }
  return LayerStack::from_layers(std::move(layers), std::move(eligible));
}

}  // namespace sba
