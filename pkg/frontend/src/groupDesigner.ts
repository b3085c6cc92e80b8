/** Live regex preview for the sample-group designer.
 *
 * Mirrors the engine's column-matching semantics exactly: case-sensitive
 * regex *search* (not full match) over column names, a column matched by two
 * patterns is an ambiguity, and a pattern matching nothing is an error.
 * Errors are reported in the same order the engine detects them (all
 * patterns are compiled first, then groups claim columns in order), so
 * `errors[0]` is what a submit would get back from the service.
 */

export interface GroupPattern {
  name: string;
  pattern: string;
}

export type PreviewErrorKind = "invalid_regex" | "zero_match" | "conflict";

export interface PreviewError {
  kind: PreviewErrorKind;
  group: string;
  message: string;
  column?: string;
}

export interface PatternPreview {
  name: string;
  pattern: string;
  /** Columns this pattern matches, in column order. */
  columns: string[];
  /** Columns also claimed by an earlier pattern (conflict badges). */
  conflicts: string[];
  invalid: boolean;
}

export interface GroupPreview {
  patterns: PatternPreview[];
  /** column name -> names of all groups whose pattern matches it */
  claims: Record<string, string[]>;
  errors: PreviewError[];
  /** Submit is enabled only when this is true. */
  valid: boolean;
}

export function previewGroups(
  columns: readonly string[],
  patterns: readonly GroupPattern[],
): GroupPreview {
  const compiled = new Map<number, RegExp>();
  const compileErrors: PreviewError[] = [];
  patterns.forEach(({ name, pattern }, i) => {
    try {
      compiled.set(i, new RegExp(pattern));
    } catch (exc) {
      compileErrors.push({
        kind: "invalid_regex",
        group: name,
        message: `invalid regex for group '${name}': ${(exc as Error).message}`,
      });
    }
  });

  const claims: Record<string, string[]> = {};
  const claimErrors: PreviewError[] = [];
  const previews: PatternPreview[] = patterns.map(({ name, pattern }, i) => {
    const rx = compiled.get(i);
    if (!rx) {
      return { name, pattern, columns: [], conflicts: [], invalid: true };
    }
    const matched = columns.filter((c) => rx.test(c));
    if (matched.length === 0) {
      claimErrors.push({
        kind: "zero_match",
        group: name,
        message: `pattern '${pattern}' for group '${name}' matched no columns`,
      });
    }
    const conflicts: string[] = [];
    for (const c of matched) {
      const owners = claims[c];
      if (owners) {
        conflicts.push(c);
        claimErrors.push({
          kind: "conflict",
          group: name,
          column: c,
          message: `column '${c}' matched by both '${owners[0]}' and '${name}'`,
        });
        owners.push(name);
      } else {
        claims[c] = [name];
      }
    }
    return { name, pattern, columns: matched, conflicts, invalid: false };
  });

  const errors = [...compileErrors, ...claimErrors];
  return { patterns: previews, claims, errors, valid: errors.length === 0 };
}
