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

#pragma once

#include <filesystem>
#include <optional>
#include <vector>

namespace mp4sr {

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_r20;    // fine-tuning only
  std::optional<double> test_loss;  // diagnostic mode only
};

/// Per-epoch training history with strictly increasing epoch numbers.
struct TrainLog {
  std::vector<EpochRecord> epochs;

  /// Throws ContractError unless `r.epoch` exceeds the last epoch.
  void append(const EpochRecord& r);
};

/// CSV with header epoch,train_loss,val_r20,test_loss; absent values are
/// left empty. Values use 17 significant digits.
void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path);

/// Parses a file written by write_train_log_csv; throws ParseError naming
/// the line on malformed rows and IoError if the file cannot be read.
TrainLog read_train_log_csv(const std::filesystem::path& path);

}  // namespace mp4sr
