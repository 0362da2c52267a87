#include "pmim/checkpoint.hpp"

#include <array>

namespace pmim {

namespace {
constexpr std::array<char, 4> kMagic = {'P', 'M', 'I', 'M'};
constexpr uint32_t kVersion = 1;
constexpr uint64_t kMaxMetaBytes = uint64_t(64) << 20;
}  // namespace

NamedTensor* Checkpoint::find(const std::string& name) {
  for (auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void Checkpoint::add(const std::string& name, RawTensor t) {
  PMIM_CHECK(find(name) == nullptr, "duplicate checkpoint tensor '", name, "'");
  tensors.push_back({name, std::move(t)});
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json meta = ckpt.meta;
  nlohmann::json dir = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& nt : ckpt.tensors) {
    PMIM_CHECK(nt.tensor.data.size() ==
                   nt.tensor.elem_count() * dtype_size(nt.tensor.dtype),
               "tensor '", nt.name, "' payload inconsistent with dims");
    dir.push_back({{"name", nt.name},
                   {"dtype", dtype_name(nt.tensor.dtype)},
                   {"shape", nt.tensor.dims},
                   {"offset", offset},
                   {"bytes", nt.tensor.data.size()}});
    offset += nt.tensor.data.size();
  }
  meta["tensors"] = std::move(dir);
  const std::string text = meta.dump();

  auto out = io::open_output(path);
  io::put_bytes(out, kMagic.data(), 4);
  io::put_u32(out, kVersion);
  io::put_u64(out, text.size());
  io::put_bytes(out, text.data(), text.size());
  for (const auto& nt : ckpt.tensors)
    if (!nt.tensor.data.empty())
      io::put_bytes(out, nt.tensor.data.data(), nt.tensor.data.size());
}

Checkpoint read_checkpoint(const std::string& path) {
  auto in = io::open_input(path);
  std::array<char, 4> magic{};
  io::get_bytes(in, magic.data(), 4, path + ": magic");
  PMIM_CHECK_DATA(magic == kMagic, path, ": bad magic (not a checkpoint file)");
  const uint32_t version = io::get_u32(in, path + ": version");
  PMIM_CHECK_DATA(version == kVersion, path, ": unsupported version ", version,
                  " (expected ", kVersion, ")");
  const uint64_t meta_len = io::get_u64(in, path + ": metadata length");
  PMIM_CHECK_DATA(meta_len > 0 && meta_len <= kMaxMetaBytes, path,
                  ": metadata length ", meta_len, " out of range");
  std::string text(static_cast<size_t>(meta_len), '\0');
  io::get_bytes(in, text.data(), text.size(), path + ": metadata");

  Checkpoint ckpt;
  try {
    ckpt.meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw data_error(path + ": metadata is not valid JSON: " + e.what());
  }
  PMIM_CHECK_DATA(ckpt.meta.contains("tensors") && ckpt.meta["tensors"].is_array(),
                  path, ": metadata has no tensor directory");

  uint64_t expected_offset = 0;
  for (const auto& entry : ckpt.meta["tensors"]) {
    NamedTensor nt;
    try {
      nt.name = entry.at("name").get<std::string>();
      nt.tensor.dtype = dtype_from_name(entry.at("dtype").get<std::string>());
      nt.tensor.dims = entry.at("shape").get<std::vector<uint64_t>>();
      const uint64_t offset = entry.at("offset").get<uint64_t>();
      const uint64_t bytes = entry.at("bytes").get<uint64_t>();
      PMIM_CHECK_DATA(offset == expected_offset, path, ": tensor '", nt.name,
                      "' offset ", offset, " is not contiguous (expected ",
                      expected_offset, ")");
      PMIM_CHECK_DATA(bytes == nt.tensor.elem_count() * dtype_size(nt.tensor.dtype),
                      path, ": tensor '", nt.name, "' byte count inconsistent");
      expected_offset += bytes;
    } catch (const nlohmann::json::exception& e) {
      throw data_error(path + ": malformed tensor directory entry: " + e.what());
    }
    PMIM_CHECK_DATA(ckpt.find(nt.name) == nullptr, path, ": duplicate tensor '",
                    nt.name, "'");
    ckpt.tensors.push_back(std::move(nt));
  }
  ckpt.meta.erase("tensors");
  for (auto& nt : ckpt.tensors) {
    nt.tensor.data.resize(static_cast<size_t>(nt.tensor.elem_count() *
                                              dtype_size(nt.tensor.dtype)));
    if (!nt.tensor.data.empty())
      io::get_bytes(in, nt.tensor.data.data(), nt.tensor.data.size(),
                    path + ": payload of '" + nt.name + "'");
  }
  io::expect_eof(in, path);
  return ckpt;
}

void strip_mask_path(Checkpoint& ckpt) {
  auto base_name = [](const std::string& name) {
    if (name.rfind("opt.m.", 0) == 0 || name.rfind("opt.v.", 0) == 0)
      return name.substr(6);
    return name;
  };
  std::erase_if(ckpt.tensors, [&](const NamedTensor& nt) {
    return is_mask_path_tensor(base_name(nt.name));
  });
  if (ckpt.meta.contains("model")) ckpt.meta["model"]["with_mask_path"] = false;
}

}  // namespace pmim
