#pragma once

#include "dwiqc/core/dataset.hpp"
#include "dwiqc/core/labels.hpp"
#include "dwiqc/core/nifti.hpp"
#include "dwiqc/core/png.hpp"
#include "dwiqc/core/slices.hpp"
#include "dwiqc/core/volume.hpp"
#include "dwiqc/sim/benchmark.hpp"
#include "dwiqc/sim/phantom.hpp"
#include "dwiqc/augment/augment.hpp"
#include "dwiqc/features/features.hpp"
#include "dwiqc/learn/model.hpp"
#include "dwiqc/pipeline/pipeline.hpp"
#include "dwiqc/eval/evaluate.hpp"
#include "dwiqc/app/config.hpp"
#include "dwiqc/app/commands.hpp"
#include "dwiqc/app/service.hpp"
