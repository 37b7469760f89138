#pragma once

// Everything in one include.

#include "xcd/adapt.hpp"
#include "xcd/cdm.hpp"
#include "xcd/checkpoint.hpp"
#include "xcd/data_model.hpp"
#include "xcd/decouple.hpp"
#include "xcd/embed.hpp"
#include "xcd/errors.hpp"
#include "xcd/metrics.hpp"
#include "xcd/oracle.hpp"
#include "xcd/pipeline.hpp"
#include "xcd/recommend.hpp"
#include "xcd/synthgen.hpp"
