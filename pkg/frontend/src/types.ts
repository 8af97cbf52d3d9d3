/** Wire types of the manager REST API. */

export type RuleRow = [uriRegex: string, ruleText: string];

export interface VhostSection {
  vhost: string;
  handler_type: string;
  upstream: string;
  rules: RuleRow[];
  default_rule: string;
  headers: Record<string, string>;
  required_auth_level: number;
  service_token_targets: string[];
  service_token_max_age: number;
  devops_cache_ttl: number;
}

export interface SessionRecord {
  sid: string;
  uid: string;
  attributes: Record<string, string>;
  auth_level: number;
  created_at: number;
  expires_at: number;
  kind: string;
}

export interface CheckUserResult {
  allowed: string;
  matched_rule: string;
  headers: Record<string, string>;
  uid: string;
  vhost: string;
  uri: string;
  synthetic: boolean;
}

export interface NotificationRecord {
  id: string;
  target: string;
  title: string;
  body: string;
  created_at: number;
  require_accept: boolean;
  accepted_at: number | null;
}

export interface AuditRecord {
  ts: number;
  kind: string;
  uid: string;
  sid_prefix: string;
  vhost: string;
  uri: string;
  client_ip: string;
  detail: Record<string, unknown>;
}

export interface CheckDevopsVerdict {
  ok: boolean;
  errors: string[];
}
