#pragma once

#include "coda/config.hpp"
#include "coda/pipeline/plan.hpp"
#include "coda/pipeline/run.hpp"
#include "coda/synth/generator.hpp"

namespace coda::cfg {

// Config-key bindings for the experiment sections. Defaults are the
// struct defaults; every field is reachable via `--set section.key=value`.
synth::GeneratorConfig generator_from(const Config& c);
pipe::ModelSpec model_from(const Config& c);
pipe::TrainPlan plan_from(const Config& c);

}  // namespace coda::cfg
