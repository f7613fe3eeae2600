#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace sqi {

/// The three systematic failure modes the constraint set targets. Each
/// constraint addresses exactly one of them.
enum class FailureMode {
  MetricHallucination,
  BackgroundInterference,
  ConfirmationBias,
};

inline constexpr int kFailureModeCount = 3;

std::string_view to_string(FailureMode mode);
std::optional<FailureMode> failure_mode_from_string(std::string_view name);

/// Prompt protocol stages, always rendered in this order.
enum class Stage {
  Axioms,
  Decomposition,
  Counterfactual,
  AnswerFormat,
};

inline constexpr int kStageCount = 4;

std::string_view to_string(Stage stage);

enum class MediaType { Png, Jpeg, Webp };

std::string_view mime_name(MediaType media);

/// Detects the media type from leading magic bytes. Unsupported or truncated
/// payloads yield nullopt.
std::optional<MediaType> sniff_media_type(std::string_view bytes);

/// An image is either a filesystem path or an inline payload; it is passed to
/// backends opaquely and never pixel-processed.
struct ImageRef {
  std::string path;
  std::string payload;  // raw bytes when inline
  std::optional<MediaType> media;

  static ImageRef from_path(std::string path);
  static ImageRef from_payload(std::string bytes, MediaType media);

  bool is_inline() const { return path.empty(); }
  bool empty() const { return path.empty() && payload.empty(); }

  bool operator==(const ImageRef&) const = default;
};

struct ImageData {
  std::string bytes;
  MediaType media;
};

/// Reads the referenced image and validates its media type against the magic
/// bytes. Throws IoError for unreadable paths and ValidationError for
/// unsupported payloads.
ImageData load_image(const ImageRef& image);

struct IllusionQuery {
  std::string item_id;
  ImageRef image;
  std::string question;
  std::optional<int> gt_label;  // 0 = perturbed, 1 = original

  bool operator==(const IllusionQuery&) const = default;
};

/// Enforces the query invariants: non-empty id, non-empty trimmed question,
/// gt_label in {0,1} when present. Throws ValidationError.
void validate_query(const IllusionQuery& query);

enum class Answer { Yes, No };

std::string_view to_string(Answer answer);

enum class ParseStatus { Clean, Recovered, Unparseable };

std::string_view to_string(ParseStatus status);

struct Verdict {
  std::optional<Answer> answer;
  ParseStatus parse_status = ParseStatus::Unparseable;

  // 1 iff Yes, 0 iff No, absent when unparseable.
  std::optional<int> numeric_label() const {
    if (!answer) return std::nullopt;
    return *answer == Answer::Yes ? 1 : 0;
  }

  bool operator==(const Verdict&) const = default;
};

Verdict verdict_from_label(int label);
int verdict_to_label(const Verdict& verdict);

struct ReasoningTrace {
  std::string decomposition;
  std::string initial_judgment;
  std::string counterfactual;
  Verdict final;
  std::string raw;  // full backend response text, byte-exact

  bool operator==(const ReasoningTrace&) const = default;
};

}  // namespace sqi
