#pragma once

#include "plaquemech/case_io.hpp"
#include "plaquemech/config.hpp"
#include "plaquemech/constitutive.hpp"
#include "plaquemech/error.hpp"
#include "plaquemech/export.hpp"
#include "plaquemech/fe_solver.hpp"
#include "plaquemech/geometry.hpp"
#include "plaquemech/isr_correlation.hpp"
#include "plaquemech/mesh.hpp"
#include "plaquemech/pipeline.hpp"
#include "plaquemech/plaque_gmm.hpp"
#include "plaquemech/profile.hpp"
#include "plaquemech/stress_analysis.hpp"
#include "plaquemech/svg_chart.hpp"
#include "plaquemech/synthetic.hpp"
#include "plaquemech/text.hpp"
#include "plaquemech/tissue.hpp"
