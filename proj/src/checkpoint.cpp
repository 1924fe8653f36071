#include "pcnn/checkpoint.hpp"

#include "pcnn/binary_io.hpp"

namespace pcnn {

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  io::Writer w(path);
  w.magic("PCK1");
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, value] : tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(value.rank()));
    for (std::size_t d : value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : value.data()) w.f64(v);
  }
  w.close();
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  io::Reader r(path);
  r.expect_magic("PCK1");
  const std::uint32_t count = r.u32("tensor count");
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t len = r.u32("name length");
    std::string name = r.bytes(len, "tensor name");
    const std::uint64_t rank_at = r.offset();
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), rank_at);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint64_t at = r.offset();
      const std::uint32_t d = r.u32("dimension");
      if (d == 0) throw FormatError("zero dimension in '" + name + "'", at);
      shape.push_back(d);
    }
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = r.f64("tensor payload");
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return out;
}

}  // namespace pcnn
