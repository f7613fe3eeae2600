#include "sqi/core.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sqi/errors.hpp"
#include "sqi/strings.hpp"

namespace sqi {

std::string_view to_string(FailureMode mode) {
  switch (mode) {
    case FailureMode::MetricHallucination:
      return "metric-hallucination";
    case FailureMode::BackgroundInterference:
      return "background-interference";
    case FailureMode::ConfirmationBias:
      return "confirmation-bias";
  }
  return "unknown";
}

std::optional<FailureMode> failure_mode_from_string(std::string_view name) {
  if (name == "metric-hallucination") return FailureMode::MetricHallucination;
  if (name == "background-interference") return FailureMode::BackgroundInterference;
  if (name == "confirmation-bias") return FailureMode::ConfirmationBias;
  return std::nullopt;
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::Axioms:
      return "axioms";
    case Stage::Decomposition:
      return "decomposition";
    case Stage::Counterfactual:
      return "counterfactual";
    case Stage::AnswerFormat:
      return "answer-format";
  }
  return "unknown";
}

std::string_view mime_name(MediaType media) {
  switch (media) {
    case MediaType::Png:
      return "image/png";
    case MediaType::Jpeg:
      return "image/jpeg";
    case MediaType::Webp:
      return "image/webp";
  }
  return "application/octet-stream";
}

std::optional<MediaType> sniff_media_type(std::string_view bytes) {
  static constexpr std::string_view kPngMagic = "\x89PNG\r\n\x1a\n";
  if (bytes.size() >= kPngMagic.size() && bytes.substr(0, kPngMagic.size()) == kPngMagic) {
    return MediaType::Png;
  }
  if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xFF &&
      static_cast<unsigned char>(bytes[1]) == 0xD8 &&
      static_cast<unsigned char>(bytes[2]) == 0xFF) {
    return MediaType::Jpeg;
  }
  if (bytes.size() >= 12 && bytes.substr(0, 4) == "RIFF" && bytes.substr(8, 4) == "WEBP") {
    return MediaType::Webp;
  }
  return std::nullopt;
}

ImageRef ImageRef::from_path(std::string path) {
  ImageRef ref;
  ref.path = std::move(path);
  return ref;
}

ImageRef ImageRef::from_payload(std::string bytes, MediaType media) {
  ImageRef ref;
  ref.payload = std::move(bytes);
  ref.media = media;
  return ref;
}

ImageData load_image(const ImageRef& image) {
  std::string bytes;
  if (image.is_inline()) {
    bytes = image.payload;
  } else {
    std::ifstream in(image.path, std::ios::binary);
    if (!in) {
      throw IoError("cannot read image file: " + image.path);
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    bytes = buffer.str();
  }
  auto sniffed = sniff_media_type(bytes);
  if (!sniffed) {
    const std::string source = image.is_inline() ? "inline payload" : image.path;
    throw ValidationError("unsupported image media type (want png, jpeg, or webp): " + source);
  }
  if (image.media && *image.media != *sniffed) {
    throw ValidationError("declared media type " + std::string(mime_name(*image.media)) +
                          " does not match payload bytes (" +
                          std::string(mime_name(*sniffed)) + ")");
  }
  return ImageData{std::move(bytes), *sniffed};
}

void validate_query(const IllusionQuery& query) {
  if (query.item_id.empty()) {
    throw ValidationError("query item_id must be non-empty");
  }
  if (trim(query.question).empty()) {
    throw ValidationError("query question must be non-empty: item " + query.item_id);
  }
  if (query.image.empty()) {
    throw ValidationError("query image reference must be set: item " + query.item_id);
  }
  if (query.gt_label && *query.gt_label != 0 && *query.gt_label != 1) {
    throw ValidationError("gt_label must be 0 or 1: item " + query.item_id);
  }
}

std::string_view to_string(Answer answer) {
  return answer == Answer::Yes ? "yes" : "no";
}

std::string_view to_string(ParseStatus status) {
  switch (status) {
    case ParseStatus::Clean:
      return "clean";
    case ParseStatus::Recovered:
      return "recovered";
    case ParseStatus::Unparseable:
      return "unparseable";
  }
  return "unknown";
}

Verdict verdict_from_label(int label) {
  if (label != 0 && label != 1) {
    throw ValidationError("label must be 0 or 1, got " + std::to_string(label));
  }
  Verdict verdict;
  verdict.answer = label == 1 ? Answer::Yes : Answer::No;
  verdict.parse_status = ParseStatus::Clean;
  return verdict;
}

int verdict_to_label(const Verdict& verdict) {
  auto label = verdict.numeric_label();
  if (!label) {
    throw ValidationError("verdict has no answer to convert to a label");
  }
  return *label;
}

}  // namespace sqi
