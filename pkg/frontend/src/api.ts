/** Thin typed client for the analysis service HTTP API.
 *
 * The UI never computes statistics: everything it displays comes out of the
 * payloads returned here. The fetch implementation is injectable so tests
 * can count and script requests.
 */

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface Payload<T = unknown> {
  schema_version: number;
  artifact: string;
  stage_hash: string;
  data: T;
}

export interface MutationResult {
  invalidated: string[];
}

export interface ApiError {
  status: number;
  kind: string;
  message: string;
}

export const SUPPORTED_SCHEMA_VERSION = 1;

export class ServiceError extends Error {
  constructor(public readonly detail: ApiError) {
    super(detail.message);
  }
}

async function parseError(res: Response): Promise<ServiceError> {
  let kind = "unknown";
  let message = res.statusText;
  try {
    const body = (await res.json()) as { error?: string; message?: string };
    if (body.error) kind = body.error;
    if (body.message) message = body.message;
  } catch {
    /* non-JSON error body */
  }
  return new ServiceError({ status: res.status, kind, message });
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike,
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async putStage(
    sessionId: string,
    stage: "design" | "preprocess" | "test" | "enrich" | "ppi",
    params: unknown,
  ): Promise<MutationResult> {
    const res = await this.fetchImpl(this.url(`/sessions/${sessionId}/${stage}`), {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(params),
    });
    if (!res.ok) throw await parseError(res);
    return (await res.json()) as MutationResult;
  }

  async getPayload<T = unknown>(sessionId: string, artifact: string): Promise<Payload<T>> {
    const res = await this.fetchImpl(
      this.url(`/sessions/${sessionId}/payload/${artifact}`),
    );
    if (!res.ok) throw await parseError(res);
    const payload = (await res.json()) as Payload<T>;
    if (payload.schema_version !== SUPPORTED_SCHEMA_VERSION) {
      throw new ServiceError({
        status: 0,
        kind: "schema_mismatch",
        message:
          `payload schema ${payload.schema_version} not supported ` +
          `(expected ${SUPPORTED_SCHEMA_VERSION}); please upgrade`,
      });
    }
    return payload;
  }

  exportUrl(sessionId: string, artifact: string, format: "csv" | "svg" | "png"): string {
    return this.url(`/sessions/${sessionId}/export/${artifact}?format=${format}`);
  }
}
