#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

namespace masslearn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitRuntime = 3;

struct Common {
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::optional<std::filesystem::path> out;
};

int cmd_train(const std::filesystem::path& config, const Common& common, std::ostream& err);

int cmd_eval(const std::filesystem::path& model, const std::filesystem::path& config,
             const std::string& split, const Common& common, std::ostream& err);

int cmd_ood(const std::filesystem::path& model, const std::filesystem::path& in_config,
            const std::filesystem::path& out_config, const std::optional<std::string>& method,
            const std::string& split, const Common& common, std::ostream& err);

int cmd_cdi_demo(std::size_t n, std::size_t k, const Common& common, std::ostream& err);

}  // namespace masslearn::cli
