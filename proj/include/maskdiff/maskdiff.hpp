#pragma once

#include "maskdiff/checkpoint.hpp"
#include "maskdiff/dataset.hpp"
#include "maskdiff/denoiser.hpp"
#include "maskdiff/errors.hpp"
#include "maskdiff/exact_engine.hpp"
#include "maskdiff/format.hpp"
#include "maskdiff/gaussian_forms.hpp"
#include "maskdiff/masked_process.hpp"
#include "maskdiff/normal.hpp"
#include "maskdiff/parallel.hpp"
#include "maskdiff/rng.hpp"
#include "maskdiff/sampler.hpp"
#include "maskdiff/schedules.hpp"
#include "maskdiff/tokens.hpp"
#include "maskdiff/trainer.hpp"
#include "maskdiff/weightings.hpp"
#include "maskdiff/verify.hpp"
