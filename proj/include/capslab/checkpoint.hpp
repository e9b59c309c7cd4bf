#pragma once

#include <memory>
#include <string>

#include "capslab/classifier.hpp"

namespace capslab {

// Model checkpoint, single self-describing binary file:
//
//   magic   "CFML1"                       5 bytes
//   kind    u8                            0 = convnet, 1 = capsnet
//   cfg_len u32 LE                        length of the config JSON
//   cfg     bytes                         model hyperparameters
//   count   u32 LE                        number of named blocks
//   per block:
//     name_len u16 LE, name bytes
//     ndim     u8, dims i64 LE each
//     data     f64 LE, row-major
//
// Loading and re-saving a checkpoint reproduces the file bit for bit.
void save_checkpoint(TrainableModel& model, const std::string& path);
std::unique_ptr<TrainableModel> load_checkpoint(const std::string& path);

}  // namespace capslab
