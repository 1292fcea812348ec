#include "tiledet/error.hpp"

namespace tiledet {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::UnsupportedFormat: return "UnsupportedFormat";
    case Errc::CorruptFile: return "CorruptFile";
    case Errc::ZeroDimension: return "ZeroDimension";
    case Errc::IoFailure: return "IoFailure";
    case Errc::InvalidDimensions: return "InvalidDimensions";
    case Errc::IdealLowPassUnsupported: return "IdealLowPassUnsupported";
    case Errc::OutOfBounds: return "OutOfBounds";
    case Errc::WrongChannelCount: return "WrongChannelCount";
    case Errc::PartitionMismatch: return "PartitionMismatch";
    case Errc::EmptySet: return "EmptySet";
    case Errc::ImageTooSmall: return "ImageTooSmall";
    case Errc::ImageSmallerThanTile: return "ImageSmallerThanTile";
    case Errc::DegenerateOutput: return "DegenerateOutput";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::IndivisibleDimensions: return "IndivisibleDimensions";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptySequence: return "EmptySequence";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace tiledet
