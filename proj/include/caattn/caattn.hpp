#ifndef CAATTN_CAATTN_HPP_
#define CAATTN_CAATTN_HPP_

#include "caattn/contrastive.hpp"
#include "caattn/corpus.hpp"
#include "caattn/decoder.hpp"
#include "caattn/experiment.hpp"
#include "caattn/features.hpp"
#include "caattn/finite_diff.hpp"
#include "caattn/gradcheck.hpp"
#include "caattn/metrics.hpp"
#include "caattn/model.hpp"
#include "caattn/pool.hpp"
#include "caattn/rng.hpp"
#include "caattn/synth.hpp"
#include "caattn/tape.hpp"
#include "caattn/tensor.hpp"
#include "caattn/vocab.hpp"

#endif  // CAATTN_CAATTN_HPP_
