// Convenience include: the whole library in one header.
#pragma once

#include "rmn/binio.hpp"
#include "rmn/data.hpp"
#include "rmn/errors.hpp"
#include "rmn/gradcheck.hpp"
#include "rmn/gradsuite.hpp"
#include "rmn/infer.hpp"
#include "rmn/jsontext.hpp"
#include "rmn/metrics.hpp"
#include "rmn/model.hpp"
#include "rmn/modules.hpp"
#include "rmn/nn.hpp"
#include "rmn/optim.hpp"
#include "rmn/param_store.hpp"
#include "rmn/rng.hpp"
#include "rmn/selector.hpp"
#include "rmn/tensor.hpp"
#include "rmn/train.hpp"
