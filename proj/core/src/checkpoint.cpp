#include "dgcn/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace dgcn {

namespace {

std::string read_line(std::istream& is, const char* what) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError(std::string("checkpoint truncated before ") + what);
  return line;
}

std::size_t parse_count(const std::string& line, const std::string& keyword) {
  std::istringstream ss(line);
  std::string word;
  std::size_t value = 0;
  std::string extra;
  if (!(ss >> word >> value) || word != keyword || (ss >> extra)) {
    throw FormatError("malformed checkpoint line '" + line + "' (expected '" + keyword + " <n>')");
  }
  return value;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const SegModel<T>& model, const RunConfig& config) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  const auto text = render_config(config);
  const auto params = model.parameters();
  os << kCheckpointTag << '\n' << "config " << text.size() << '\n' << text << "entries " << params.size() << '\n';
  for (const auto& p : params) {
    os << "name " << p.name << '\n';
    write_tensor(os, p.tensor);
  }
  if (!os) throw FormatError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  const auto tag = read_line(is, "tag");
  if (tag != kCheckpointTag) throw FormatError("bad checkpoint tag '" + tag.substr(0, 16) + "' (expected DGCN1)");
  const std::size_t config_bytes = parse_count(read_line(is, "config block"), "config");
  std::string text(config_bytes, '\0');
  is.read(text.data(), static_cast<std::streamsize>(config_bytes));
  if (static_cast<std::size_t>(is.gcount()) != config_bytes) throw FormatError("checkpoint truncated inside config block");
  Checkpoint ckpt;
  try {
    ckpt.config = parse_config(text);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config block: ") + e.what());
  }
  const std::size_t count = parse_count(read_line(is, "entry count"), "entries");
  std::set<std::string> names;
  for (std::size_t i = 0; i < count; ++i) {
    const auto line = read_line(is, "entry name");
    if (line.rfind("name ", 0) != 0) throw FormatError("malformed checkpoint entry header '" + line + "'");
    CheckpointEntry entry{line.substr(5), {}};
    if (!names.insert(entry.name).second) throw FormatError("duplicate checkpoint entry '" + entry.name + "'");
    entry.record = read_tensor_record(is);
    ckpt.entries.push_back(std::move(entry));
  }
  return ckpt;
}

template <typename T>
SegModel<T> model_from_checkpoint(const Checkpoint& ckpt, const WarningFn& warn) {
  Rng rng(0);
  auto model = SegModel<T>::init(ckpt.config.model_config(), rng);
  auto params = model.parameters();
  if (params.size() != ckpt.entries.size()) {
    throw FormatError("checkpoint holds " + std::to_string(ckpt.entries.size()) + " entries, config expects " +
                      std::to_string(params.size()));
  }
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : ckpt.entries) by_name[e.name] = &e;
  std::vector<Tensor<T>> loaded;
  bool converted_any = false;
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks entry '" + p.name + "'");
    if (it->second->record.shape != p.tensor.shape()) {
      throw FormatError("entry '" + p.name + "' has shape " + shape_string(it->second->record.shape) + ", config expects " +
                        shape_string(p.tensor.shape()));
    }
    bool converted = false;
    loaded.push_back(it->second->record.template to_tensor<T>(&converted));
    converted_any = converted_any || converted;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_data();
    auto src = loaded[i].data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  if (converted_any && warn) {
    warn("checkpoint stores " + to_string(ckpt.entries.front().record.dtype) + " tensors; converted to " +
         to_string(dtype_of<T>()));
  }
  return model;
}

template <typename T>
SegModel<T> load_checkpoint(const std::filesystem::path& path, const WarningFn& warn) {
  return model_from_checkpoint<T>(read_checkpoint(path), warn);
}

template void save_checkpoint(const std::filesystem::path&, const SegModel<float>&, const RunConfig&);
template void save_checkpoint(const std::filesystem::path&, const SegModel<double>&, const RunConfig&);
template SegModel<float> load_checkpoint(const std::filesystem::path&, const WarningFn&);
template SegModel<double> load_checkpoint(const std::filesystem::path&, const WarningFn&);
template SegModel<float> model_from_checkpoint(const Checkpoint&, const WarningFn&);
template SegModel<double> model_from_checkpoint(const Checkpoint&, const WarningFn&);

}  // namespace dgcn
