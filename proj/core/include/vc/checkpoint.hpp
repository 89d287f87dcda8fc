#pragma once

#include <filesystem>
#include <memory>

#include "vc/model.hpp"
#include "vc/pipeline.hpp"

namespace vc {

// Binary checkpoint: config text, speaker names, every named parameter
// (including spectral-norm state) and, when a trainer is given, optimizer
// moments, counters and the RNG state. Values are stored as raw IEEE doubles
// so a load reproduces the saved model exactly.
void save_checkpoint(const std::filesystem::path& path, const VoiceConversionModel& model,
                     const Trainer* trainer = nullptr);

std::unique_ptr<VoiceConversionModel> load_model(const std::filesystem::path& path);

// Restores optimizer and counter state into a trainer built on a model that
// was itself loaded from `path`. Throws DataError if the file carries none.
void restore_trainer(const std::filesystem::path& path, Trainer& trainer);

}  // namespace vc
