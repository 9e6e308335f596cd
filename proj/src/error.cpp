#include "brainage/error.hpp"

namespace brainage {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorKind::Truncated: return "Truncated";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::AllZeroVolume: return "AllZeroVolume";
    case ErrorKind::DegenerateVolume: return "DegenerateVolume";
    case ErrorKind::KTooLarge: return "KTooLarge";
    case ErrorKind::TargetTooLarge: return "TargetTooLarge";
    case ErrorKind::BadAxis: return "BadAxis";
    case ErrorKind::BadConfig: return "BadConfig";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::BadProbability: return "BadProbability";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::NoGraph: return "NoGraph";
    case ErrorKind::MissingGradient: return "MissingGradient";
    case ErrorKind::EpochOutOfRange: return "EpochOutOfRange";
    case ErrorKind::BadCheckpoint: return "BadCheckpoint";
    case ErrorKind::BadSpec: return "BadSpec";
    case ErrorKind::WrongSliceCount: return "WrongSliceCount";
    case ErrorKind::EmptyManifest: return "EmptyManifest";
    case ErrorKind::EmptySplit: return "EmptySplit";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::BadRange: return "BadRange";
    case ErrorKind::BadManifest: return "BadManifest";
    case ErrorKind::UsageError: return "UsageError";
  }
  return "Unknown";
}

}  // namespace brainage
