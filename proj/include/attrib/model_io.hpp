#pragma once

// Versioned JSON documents for classifiers and students.
//
// {"format":"attrib-model","version":1,"kind":"classifier"|"student","config":{...},
//  "tensors":{"embedding":{"shape":[..],"values":[..]},"layer0.weight":...,"head.bias":...},
//  "run_config":{...}}
// Doubles are written in shortest round-trip form, so save/load is bit-exact.

#include <filesystem>
#include <string>

#include "attrib/models.hpp"

namespace attrib {

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

/// run_config_json may be empty; otherwise it must be a JSON object and is embedded verbatim.
std::string classifier_to_json(const TextClassifier& f, const std::string& run_config_json = {});
std::string student_to_json(const StudentExplainer& e, const std::string& run_config_json = {});

/// Rejects documents of the other kind, unknown versions and mis-shaped tensors.
TextClassifier classifier_from_json(const std::string& text);
StudentExplainer student_from_json(const std::string& text);

void save_classifier(const TextClassifier& f, const std::filesystem::path& path,
                     const std::string& run_config_json = {});
void save_student(const StudentExplainer& e, const std::filesystem::path& path,
                  const std::string& run_config_json = {});
TextClassifier load_classifier(const std::filesystem::path& path);
StudentExplainer load_student(const std::filesystem::path& path);

/// fnv1a64 of the run-config-free classifier document, as "fnv1a64:<16 hex>".
std::string classifier_checksum(const TextClassifier& f);

}  // namespace attrib
