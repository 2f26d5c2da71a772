#include "mocnn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <sstream>

#include "mocnn/io.hpp"

namespace mocnn {

namespace {

void put_f64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xff));
    bits >>= 8;
  }
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<double>(bits);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string line() {
    const auto end = bytes_.find('\n', pos_);
    if (end == std::string_view::npos) throw Error(Errc::FormatError, "truncated checkpoint header");
    std::string out(bytes_.substr(pos_, end - pos_));
    pos_ = end + 1;
    return out;
  }

  const unsigned char* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw Error(Errc::FormatError, "truncated checkpoint data");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::string out;
  out += kCheckpointMagic;
  out += "\ntensors " + std::to_string(tensors.size()) + "\n";
  for (const auto& t : tensors) {
    if (t.name.empty() || t.name.find_first_of(" \n") != std::string::npos) {
      throw Error(Errc::InvalidArgument, "tensor name must be non-empty without whitespace");
    }
    out += t.name + (t.trainable ? " 1 " : " 0 ") + std::to_string(t.value.rank());
    for (auto d : t.value.shape()) out += " " + std::to_string(d);
    out += "\n";
    out.reserve(out.size() + 8 * t.value.size());
    for (double v : t.value.values()) put_f64(out, v);
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.line() != kCheckpointMagic) throw Error(Errc::FormatError, "bad checkpoint magic");
  std::istringstream count_line(in.line());
  std::string keyword;
  std::size_t count = 0;
  if (!(count_line >> keyword >> count) || keyword != "tensors") {
    throw Error(Errc::FormatError, "bad tensor count line");
  }
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream header(in.line());
    NamedTensor t;
    int trainable = 0;
    std::size_t rank = 0;
    if (!(header >> t.name >> trainable >> rank) || (trainable != 0 && trainable != 1) || rank > 8) {
      throw Error(Errc::FormatError, "bad tensor header");
    }
    Shape shape(rank);
    for (auto& d : shape) {
      if (!(header >> d)) throw Error(Errc::FormatError, "bad tensor shape");
    }
    const std::size_t n = shape_size(shape);
    if (n > (std::size_t{1} << 33)) throw Error(Errc::FormatError, "tensor too large");
    const unsigned char* raw = in.take(8 * n);
    std::vector<double> data(n);
    for (std::size_t k = 0; k < n; ++k) data[k] = get_f64(raw + 8 * k);
    t.value = Tensord(std::move(shape), std::move(data));
    t.trainable = trainable == 1;
    tensors.push_back(std::move(t));
  }
  if (!in.done()) throw Error(Errc::FormatError, "trailing bytes after checkpoint");
  return tensors;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  write_file_atomic(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace mocnn
