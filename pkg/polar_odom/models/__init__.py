# models