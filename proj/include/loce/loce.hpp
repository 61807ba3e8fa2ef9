#pragma once

#include "loce/common.hpp"
#include "loce/npy.hpp"
#include "loce/projection.hpp"
#include "loce/tensor_store.hpp"
#include "loce/optimizer.hpp"
#include "loce/baselines.hpp"
#include "loce/clustering.hpp"
#include "loce/metrics.hpp"
#include "loce/density.hpp"
#include "loce/svg.hpp"
#include "loce/report.hpp"
#include "loce/synthetic.hpp"
#include "loce/commands.hpp"
