// placeholder, populated with the simulate implementation
