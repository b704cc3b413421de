#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace harmony {

enum class Errc {
  // rdf-core
  InvalidTerm,
  SyntaxError,
  UnboundVariable,
  // mapping-lift
  MappingSyntaxError,
  UnknownPrefix,
  DanglingJoin,
  SourceSyntaxError,
  IteratorNotFound,
  MissingSource,
  UnknownFunction,
  LookupTableMissing,
  ArityError,
  NonNumericOperand,
  // graph-ops
  AmbiguousKey,
  InvalidRange,
  ShapeSyntaxError,
  // lowering
  TemplateSyntaxError,
  UnknownQuery,
  UnboundTemplateVariable,
  // catalogue
  Forbidden,
  Unauthorized,
  SchemaViolation,
  IllegalTransition,
  UnknownVocabularyTerm,
  NotFound,
  // gateway / pipelines / collector
  NotApproved,
  UnknownDistribution,
  UpstreamUnavailable,
  PipelineError,
  InvalidConfig,
  Io,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::InvalidTerm: return "InvalidTerm";
    case Errc::SyntaxError: return "SyntaxError";
    case Errc::UnboundVariable: return "UnboundVariable";
    case Errc::MappingSyntaxError: return "MappingSyntaxError";
    case Errc::UnknownPrefix: return "UnknownPrefix";
    case Errc::DanglingJoin: return "DanglingJoin";
    case Errc::SourceSyntaxError: return "SourceSyntaxError";
    case Errc::IteratorNotFound: return "IteratorNotFound";
    case Errc::MissingSource: return "MissingSource";
    case Errc::UnknownFunction: return "UnknownFunction";
    case Errc::LookupTableMissing: return "LookupTableMissing";
    case Errc::ArityError: return "ArityError";
    case Errc::NonNumericOperand: return "NonNumericOperand";
    case Errc::AmbiguousKey: return "AmbiguousKey";
    case Errc::InvalidRange: return "InvalidRange";
    case Errc::ShapeSyntaxError: return "ShapeSyntaxError";
    case Errc::TemplateSyntaxError: return "TemplateSyntaxError";
    case Errc::UnknownQuery: return "UnknownQuery";
    case Errc::UnboundTemplateVariable: return "UnboundTemplateVariable";
    case Errc::Forbidden: return "Forbidden";
    case Errc::Unauthorized: return "Unauthorized";
    case Errc::SchemaViolation: return "SchemaViolation";
    case Errc::IllegalTransition: return "IllegalTransition";
    case Errc::UnknownVocabularyTerm: return "UnknownVocabularyTerm";
    case Errc::NotFound: return "NotFound";
    case Errc::NotApproved: return "NotApproved";
    case Errc::UnknownDistribution: return "UnknownDistribution";
    case Errc::UpstreamUnavailable: return "UpstreamUnavailable";
    case Errc::PipelineError: return "PipelineError";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

// Every failure raised by the library carries one of the codes above; the
// gateway and CLI translate codes into status codes and exit codes.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace harmony
