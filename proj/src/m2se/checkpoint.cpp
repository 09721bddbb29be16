// Copyright 2026 The MP4SR Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "m2se/checkpoint.hpp"

#include <map>

#include "common/binio.hpp"
#include "common/errors.hpp"

namespace mp4sr::m2se {

namespace {

constexpr char kMagic[8] = {'M', 'P', '4', 'S', 'R', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

void put_tensors(ByteWriter& w, const std::vector<StoredTensor>& ts) {
  w.u32(static_cast<std::uint32_t>(ts.size()));
  for (const auto& t : ts) {
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name);
    w.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(d);
    for (float v : t.values) w.f32(v);
  }
}

std::vector<StoredTensor> get_tensors(ByteReader& r) {
  std::vector<StoredTensor> ts(r.u32());
  for (auto& t : ts) {
    t.name = std::string(r.bytes(r.u16()));
    r.context = " in tensor '" + t.name + "'";
    t.shape.resize(r.u8());
    for (auto& d : t.shape) d = r.u64();
    const std::size_t n = nk::numel_of(t.shape);
    if (n > r.remaining() / 4) throw FormatError("checkpoint truncated" + r.context);
    t.values.resize(n);
    for (auto& v : t.values) v = r.f32();
  }
  return ts;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  ByteWriter w;
  w.bytes(std::string_view(kMagic, sizeof(kMagic)));
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(ck.config_json.size()));
  w.bytes(ck.config_json);
  w.u64(ck.epoch);
  w.f64(ck.best_metric);
  w.u32(static_cast<std::uint32_t>(ck.rng_states.size()));
  for (const auto& s : ck.rng_states)
    for (auto word : s) w.u64(word);
  put_tensors(w, ck.params);
  w.u64(ck.adam_step);
  put_tensors(w, ck.adam_m);
  put_tensors(w, ck.adam_v);
  write_file(path, w.str());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  ByteReader r(read_file(path), "checkpoint");
  r.context = " (header)";
  if (r.bytes(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic)))
    throw FormatError("not a checkpoint (bad magic): " + path.string());
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.config_json = std::string(r.bytes(r.u32()));
  ck.epoch = r.u64();
  ck.best_metric = r.f64();
  ck.rng_states.resize(r.u32());
  for (auto& s : ck.rng_states)
    for (auto& word : s) word = r.u64();
  ck.params = get_tensors(r);
  r.context = " (optimizer)";
  ck.adam_step = r.u64();
  ck.adam_m = get_tensors(r);
  ck.adam_v = get_tensors(r);
  if (!r.done()) throw FormatError("trailing bytes in checkpoint " + path.string());
  return ck;
}

template <class Real>
std::vector<StoredTensor> export_tensors(const Model<Real>& m) {
  std::vector<StoredTensor> out;
  for (const auto& p : m.parameters()) {
    out.push_back({p.name, p.tensor.shape(),
                   std::vector<float>(p.tensor.data().begin(), p.tensor.data().end())});
  }
  return out;
}

template <class Real>
void import_tensors(Model<Real>& m, const std::vector<StoredTensor>& tensors) {
  std::map<std::string, const StoredTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  auto params = m.parameters();
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ContractError("checkpoint lacks parameter '" + p.name + "'");
    const auto& t = *it->second;
    if (t.shape != p.tensor.shape()) {
      throw ContractError("parameter '" + p.name + "' has shape " + nk::shape_str(t.shape) +
                          " in checkpoint, model expects " + nk::shape_str(p.tensor.shape()));
    }
    std::copy(t.values.begin(), t.values.end(), p.tensor.data().begin());
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw ContractError("checkpoint parameter '" + by_name.begin()->first +
                        "' does not belong to this model");
  }
}

template std::vector<StoredTensor> export_tensors<float>(const Model<float>&);
template std::vector<StoredTensor> export_tensors<double>(const Model<double>&);
template void import_tensors<float>(Model<float>&, const std::vector<StoredTensor>&);
template void import_tensors<double>(Model<double>&, const std::vector<StoredTensor>&);

}  // namespace mp4sr::m2se
