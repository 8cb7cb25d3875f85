#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace coughnet {

/// Failure categories raised across the pipeline. Each maps onto one of the
/// documented error cases of the owning module.
enum class Errc {
  // audio_io
  malformed_container,
  unsupported_codec,
  empty_audio,
  // dsp
  clip_too_short,
  // dataset
  missing_column,
  missing_audio,
  unknown_pcr_value,
  too_few_records,
  single_class,
  // nn / model
  shape_mismatch,
  input_too_small,
  batch_too_small,
  non_finite,
  invalid_arch,
  version_mismatch,
  corrupt_file,
  non_finite_loss,
  // eval
  zero_variance,
  // general
  io_failure,
  invalid_argument,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace coughnet
