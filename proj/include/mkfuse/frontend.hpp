#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mkfuse/ast.hpp"

namespace mkfuse {

/// Parses Mini-Kernel source, attaches positions, and validates names,
/// types, labels and the call graph. Throws Error on any violation.
Program parse_program(const std::string& source);

/// Parse without semantic validation (grammar only). Used by tooling that
/// wants to inspect ill-typed trees; everything else goes through
/// parse_program.
Program parse_program_unchecked(const std::string& source);

/// Semantic checks: distinct top-level names, identifier binding,
/// int/float typing, label resolution, call resolution, recursion
/// rejection, block-dimension sanity.
void validate_program(const Program& program);

struct LintWarning {
  SourcePos pos;
  std::string message;
};

/// Non-fatal checks, currently: goto statements that jump forward over a
/// declaration.
std::vector<LintWarning> lint_program(const Program& program);

/// Replaces every call in the kernel body with the inlined callee body.
/// Formals become fresh locals; multi-return bodies use a goto to a fresh
/// end label. Throws Recursion (naming the cycle) or UnresolvedCall.
Kernel inline_calls(const Kernel& kernel, const std::vector<FuncDef>& funcs);

/// Moves every declaration to a leading prefix of the body; initialized
/// declarations are split into a bare declaration plus an assignment at
/// the original location. Same-named declarations in distinct scopes get
/// distinct fresh names. Requires a call-free kernel.
Kernel lift_declarations(const Kernel& kernel);

/// Prefixes every local, shared array, and label with `prefix`. Returns
/// the renamed kernel and the applied old->new mapping. Parameters keep
/// their names.
std::pair<Kernel, std::vector<std::pair<std::string, std::string>>>
rename_locals(const Kernel& kernel, const std::string& prefix);

/// inline_calls + lift_declarations + rename_locals.
Kernel normalize_kernel(const Kernel& kernel, const std::vector<FuncDef>& funcs,
                        const std::string& prefix);

/// True when no declaration follows the first non-declaration statement.
bool has_decl_prefix_form(const Kernel& kernel);

// Mini-Kernel pretty-printers. Emitted text re-parses to a structurally
// equal tree.
std::string emit_minikernel(const Program& program);
std::string emit_minikernel(const Kernel& kernel);
std::string emit_expr(const Expr& expr);

}  // namespace mkfuse
