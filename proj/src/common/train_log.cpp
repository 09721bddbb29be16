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

#include "common/train_log.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "common/errors.hpp"

namespace mp4sr {

void TrainLog::append(const EpochRecord& r) {
  if (!epochs.empty() && r.epoch <= epochs.back().epoch) {
    throw ContractError("train log epochs must increase: " + std::to_string(r.epoch) + " after " +
                        std::to_string(epochs.back().epoch));
  }
  epochs.push_back(r);
}

void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << std::setprecision(17) << "epoch,train_loss,val_r20,test_loss\n";
  for (const auto& e : log.epochs) {
    out << e.epoch << ',' << e.train_loss << ',';
    if (e.val_r20) out << *e.val_r20;
    out << ',';
    if (e.test_loss) out << *e.test_loss;
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

namespace {

double parse_number(const std::string& field, std::size_t line) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(field, &used);
  } catch (const std::exception&) {
    throw ParseError("bad number '" + field + "'", line);
  }
  if (used != field.size()) throw ParseError("bad number '" + field + "'", line);
  return v;
}

}  // namespace

TrainLog read_train_log_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::string text;
  if (!std::getline(in, text) || text != "epoch,train_loss,val_r20,test_loss") {
    throw ParseError("expected header epoch,train_loss,val_r20,test_loss", 1);
  }
  TrainLog log;
  std::size_t line = 1;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(text);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (text.back() == ',') f.emplace_back();
    if (f.size() != 4) throw ParseError("expected 4 fields", line);
    EpochRecord r;
    const double epoch = parse_number(f[0], line);
    if (epoch < 1 || epoch != static_cast<double>(static_cast<std::size_t>(epoch)))
      throw ParseError("bad epoch '" + f[0] + "'", line);
    r.epoch = static_cast<std::size_t>(epoch);
    r.train_loss = parse_number(f[1], line);
    if (!f[2].empty()) r.val_r20 = parse_number(f[2], line);
    if (!f[3].empty()) r.test_loss = parse_number(f[3], line);
    try {
      log.append(r);
    } catch (const ContractError& e) {
      throw ParseError(e.what(), line);
    }
  }
  return log;
}

}  // namespace mp4sr
