// placeholder, populated with the inference implementation
