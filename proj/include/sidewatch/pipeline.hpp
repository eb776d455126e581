// SPDX-License-Identifier: Apache-2.0
#pragma once

// Whole-command operations shared by the C API and the command-line tool.

#include "sidewatch/config.hpp"
#include "sidewatch/evalharness.hpp"
#include "sidewatch/models.hpp"
#include "sidewatch/telemetry.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sidewatch::pipeline {

/// Generates the configured corpus into `dir` (CSV files + manifest.json).
telemetry::Manifest generate(const config::RunConfig& cfg, const std::filesystem::path& dir);

/// Indexes the trace files of a directory and writes the manifest to `out`.
telemetry::Manifest index(const std::filesystem::path& dir, const std::filesystem::path& out);

/// Reads a manifest (or indexes a directory), tags it with the configured split and writes it to `out`.
telemetry::Manifest split(const config::RunConfig& cfg, const std::filesystem::path& manifest,
                          const std::filesystem::path& out);

/// Trains the configured model on the train-tagged traces and saves the artifact.
models::TrainResult train(const config::RunConfig& cfg, const std::filesystem::path& manifest,
                          const std::filesystem::path& artifact);

/// Evaluates each artifact on the test-tagged traces; writes the report files into `out_dir`.
/// Throws EmptyPopulation when no test-tagged trace exists.
eval::EvalReport evaluate(const config::RunConfig& cfg, const std::filesystem::path& manifest,
                          const std::vector<std::filesystem::path>& artifacts, const std::filesystem::path& out_dir);

enum class SweepKind { kThreshold, kEncoding, kSequenceLength };
SweepKind parse_sweep_kind(std::string_view name);  // threshold | encoding | seqlen

/// Runs one sweep and writes the report files. The threshold sweep needs a trained artifact;
/// the others train their own models from the train-tagged traces.
eval::EvalReport sweep(const config::RunConfig& cfg, SweepKind kind, const std::filesystem::path& manifest,
                       const std::filesystem::path& artifact, const std::filesystem::path& out_dir);

/// Human-readable description: family, exact parameter count, layers, windows, seeds.
std::string inspect_text(const models::ModelArtifact& model);
std::string inspect_json(const models::ModelArtifact& model);

}  // namespace sidewatch::pipeline
