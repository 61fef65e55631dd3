#pragma once

#include "mmjigsaw/core/adam.hpp"
#include "mmjigsaw/core/error.hpp"
#include "mmjigsaw/core/gradcheck.hpp"
#include "mmjigsaw/core/layers.hpp"
#include "mmjigsaw/core/ops.hpp"
#include "mmjigsaw/core/rng.hpp"
#include "mmjigsaw/core/tensor.hpp"
#include "mmjigsaw/crossmodal/sweep.hpp"
#include "mmjigsaw/crossmodal/translator.hpp"
#include "mmjigsaw/permute/assignment.hpp"
#include "mmjigsaw/permute/permutation.hpp"
#include "mmjigsaw/permute/sinkhorn.hpp"
#include "mmjigsaw/puzzle/puzzle.hpp"
#include "mmjigsaw/puzzle/synth.hpp"
#include "mmjigsaw/puzzle/volume.hpp"
#include "mmjigsaw/solver/encoder.hpp"
#include "mmjigsaw/solver/solver.hpp"
#include "mmjigsaw/transfer/experiments.hpp"
#include "mmjigsaw/transfer/finetune.hpp"
#include "mmjigsaw/transfer/segmodel.hpp"
#include "mmjigsaw/io/binary.hpp"
#include "mmjigsaw/io/config.hpp"
#include "mmjigsaw/io/formats.hpp"
#include "mmjigsaw/io/manifest.hpp"
