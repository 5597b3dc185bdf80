#pragma once

#include "uplvp/autograd.hpp"
#include "uplvp/checkpoint.hpp"
#include "uplvp/config.hpp"
#include "uplvp/encoders.hpp"
#include "uplvp/error.hpp"
#include "uplvp/eval.hpp"
#include "uplvp/fixtures.hpp"
#include "uplvp/geometry.hpp"
#include "uplvp/head.hpp"
#include "uplvp/hungarian.hpp"
#include "uplvp/losses.hpp"
#include "uplvp/ops.hpp"
#include "uplvp/optim.hpp"
#include "uplvp/pgm.hpp"
#include "uplvp/prompts.hpp"
#include "uplvp/proposals.hpp"
#include "uplvp/provenance.hpp"
#include "uplvp/tensor.hpp"
#include "uplvp/tensor_io.hpp"
#include "uplvp/train.hpp"
