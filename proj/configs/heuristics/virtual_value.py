def heuristic(v):
  return v - (1 - cdf(v)) / pdf(v)
