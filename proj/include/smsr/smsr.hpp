#pragma once

#include "cg.hpp"
#include "container.hpp"
#include "encoding.hpp"
#include "fmri_analysis.hpp"
#include "pipeline.hpp"
#include "regularizer.hpp"
#include "report.hpp"
#include "ssdu_masking.hpp"
#include "synthdata.hpp"
#include "training.hpp"
#include "unrolled.hpp"
