#pragma once

#include <string>

#include "capslab/attacks.hpp"

namespace capslab {

// 8-bit binary PGM (P5). Values in [0,1] quantize by round-half-up.
void write_pgm(const std::string& path, const Tensor& image);
Tensor read_pgm(const std::string& path);

unsigned char quantize_unit_pixel(double v);  // 0.5 -> 128

// Writes <stem>_original.pgm, <stem>_adversarial.pgm and
// <stem>_perturbation.pgm (min-max rescaled for visibility) for one record.
void export_images(const AttackResult& result, const std::string& stem);

}  // namespace capslab
