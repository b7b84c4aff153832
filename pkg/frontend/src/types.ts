// Wire types, mirroring the session service JSON exactly.

export interface LossBreakdown {
  spa: number;
  exp: number;
  tva: number;
  crl: number;
  total: number;
}

export interface Weights {
  spa: number;
  exp: number;
  tva: number;
  crl: number;
}

export interface StateMetadata {
  step: number;
  rf_applied: boolean;
  weights: Weights;
}

export interface StateView {
  step: number;
  png_b64: string;
  breakdown: LossBreakdown;
  mean_reward: number;
  metadata: StateMetadata;
}

export interface CheckpointInfo {
  id: string;
  layers: number;
  hidden: number;
  actions: number;
}

export interface ErrorShape {
  code: string;
  message: string;
}
