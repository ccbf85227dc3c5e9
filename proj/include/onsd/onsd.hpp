#pragma once

#include "onsd/error.hpp"
#include "onsd/imaging.hpp"
#include "onsd/image_io.hpp"
#include "onsd/csv.hpp"
#include "onsd/stats.hpp"
#include "onsd/parallel.hpp"
#include "onsd/ingest.hpp"
#include "onsd/measurement.hpp"
#include "onsd/keyframe.hpp"
#include "onsd/phantom.hpp"
#include "onsd/grading/grades.hpp"
#include "onsd/grading/metrics.hpp"
#include "onsd/grading/lasso.hpp"
#include "onsd/grading/classifiers.hpp"
#include "onsd/grading/threshold.hpp"
#include "onsd/grading/pipeline.hpp"
