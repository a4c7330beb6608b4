#include "dultra/autodiff/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dultra::ad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian");

fs::path with_ext(const fs::path& stem, const char* ext) {
  fs::path p = stem;
  p += ext;
  return p;
}

}  // namespace

void save_tensors(const fs::path& stem, const std::vector<NamedTensor>& tensors, const json& meta) {
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  std::ofstream bin(with_ext(stem, ".bin"), std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("cannot write " + with_ext(stem, ".bin").string());
  json manifest;
  manifest["format"] = "float64-le";
  manifest["tensors"] = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    manifest["tensors"].push_back({{"name", t.name}, {"shape", t.value.shape()}, {"offset", offset}});
    const auto bytes = t.value.size() * sizeof(double);
    bin.write(reinterpret_cast<const char*>(t.value.raw()), static_cast<std::streamsize>(bytes));
    offset += bytes;
  }
  manifest["bytes"] = offset;
  manifest["meta"] = meta;
  std::ofstream js(with_ext(stem, ".json"), std::ios::trunc);
  if (!js) throw std::runtime_error("cannot write " + with_ext(stem, ".json").string());
  js << manifest.dump(2) << '\n';
}

std::vector<NamedTensor> load_tensors(const fs::path& stem, json* meta) {
  const fs::path jpath = with_ext(stem, ".json");
  const fs::path bpath = with_ext(stem, ".bin");
  std::ifstream js(jpath);
  if (!js) throw std::runtime_error("missing checkpoint manifest " + jpath.string());
  json manifest = json::parse(js);
  std::ifstream bin(bpath, std::ios::binary);
  if (!bin) throw std::runtime_error("missing checkpoint data " + bpath.string());
  std::vector<NamedTensor> out;
  for (const auto& entry : manifest.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    std::vector<double> data(element_count(shape));
    bin.seekg(static_cast<std::streamoff>(offset));
    bin.read(reinterpret_cast<char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!bin) {
      throw std::runtime_error("truncated checkpoint data for " +
                               entry.at("name").get<std::string>() + " in " + bpath.string());
    }
    out.push_back({entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data))});
  }
  if (meta) *meta = manifest.value("meta", json::object());
  return out;
}

void save_parameters(const fs::path& stem, const ParameterSet& params, const json& meta) {
  std::vector<NamedTensor> tensors;
  for (const auto& p : params) tensors.push_back({p.name, p.value});
  save_tensors(stem, tensors, meta);
}

void load_parameters(const fs::path& stem, ParameterSet& params, json* meta) {
  auto tensors = load_tensors(stem, meta);
  std::size_t matched = 0;
  for (auto& t : tensors) {
    if (!params.contains(t.name)) continue;
    Parameter& p = params.at(t.name);
    if (p.value.shape() != t.value.shape()) {
      throw std::runtime_error("checkpoint shape mismatch for " + t.name + ": " +
                               to_string(t.value.shape()) + " vs " + to_string(p.value.shape()));
    }
    p.value = std::move(t.value);
    ++matched;
  }
  if (matched != params.size()) {
    throw std::runtime_error("checkpoint " + stem.string() + " is missing parameters (" +
                             std::to_string(matched) + " of " + std::to_string(params.size()) +
                             " found)");
  }
}

void save_optimizer(const fs::path& stem, const ParameterSet& params, const OptimizerState& state) {
  std::vector<NamedTensor> tensors;
  for (std::size_t i = 0; i < params.size(); ++i) {
    tensors.push_back({"m/" + params[i].name, state.m[i]});
    tensors.push_back({"v/" + params[i].name, state.v[i]});
  }
  const AdamWConfig& c = state.config;
  json meta = {{"step", state.step},       {"lr", c.lr},   {"beta1", c.beta1},
               {"beta2", c.beta2},         {"eps", c.eps}, {"weight_decay", c.weight_decay},
               {"clip_norm", c.clip_norm}};
  save_tensors(stem, tensors, meta);
}

void load_optimizer(const fs::path& stem, const ParameterSet& params, OptimizerState& state) {
  json meta;
  auto tensors = load_tensors(stem, &meta);
  state = OptimizerState(params, state.config);
  state.step = meta.at("step").get<std::size_t>();
  state.config.lr = meta.at("lr").get<double>();
  state.config.beta1 = meta.at("beta1").get<double>();
  state.config.beta2 = meta.at("beta2").get<double>();
  state.config.eps = meta.at("eps").get<double>();
  state.config.weight_decay = meta.at("weight_decay").get<double>();
  state.config.clip_norm = meta.value("clip_norm", 0.0);
  for (auto& t : tensors) {
    const bool first = t.name.rfind("m/", 0) == 0;
    const std::size_t idx = params.index_of(t.name.substr(2));
    (first ? state.m : state.v)[idx] = std::move(t.value);
  }
}

std::string parameter_digest(const ParameterSet& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : params) {
    feed(p.name.data(), p.name.size());
    feed(p.value.raw(), p.value.size() * sizeof(double));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dultra::ad
