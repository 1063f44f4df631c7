#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "nexus/ingest.hpp"
#include "nexus/mvtb.hpp"
#include "nexus/pipeline.hpp"
#include "nexus/preprocess.hpp"
#include "nexus/synth.hpp"

namespace nexus::cli {

enum ExitCode : int {
    kOk = 0,
    kInputError = 2,
    kExcluded = 3,
    kMissingPrerequisite = 4,
    kNumericFailure = 5,
};

struct RunConfig {
    std::filesystem::path data_dir = "data";
    std::filesystem::path out_dir = "out";
    StudyPeriod period;
    std::vector<int> summer_months{6, 7, 8, 9};
    ClimateOptions climate;
    CoverageThresholds coverage;
    mvtb::Hyperparams hyper;
    int k_folds = 5;
    pipeline::SelectionConfig selection;
    std::vector<Scenario> scenarios{Scenario::rcp45, Scenario::rcp85};
    std::string analog_source = "ensemble";
    int ssp_base_year = 2020;
    int ssp_target_year = 2080;
    pipeline::EmissionsConfig emissions;
    synth::SynthConfig synth;
    std::uint64_t seed = 20240601;
    int jobs = 1;
    bool debug_dumps = false;

    void validate() const;  // throws InputError
};

// Applies the keys present in a JSON document over `base`.
RunConfig parse_config(const std::string& json_text, RunConfig base = {});
std::string config_json(const RunConfig& config);

// Entry point shared by the executable and the tests; args exclude argv[0].
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nexus::cli
